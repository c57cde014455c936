use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{Evaluation, KKTResult, NLProblem, NlpError, SolveStatus, SolverConfig};

/// Search direction and multiplier estimates from one QP subproblem.
struct Direction {
    d: DVector<f64>,
    lambda_eq: DVector<f64>,
    mu_in: DVector<f64>,
    z_lower: DVector<f64>,
    z_upper: DVector<f64>,
    /// l1 violation of the linearized constraints left by an elastic solve.
    lin_viol: f64,
    elastic: bool,
}

enum QpFailure {
    NotPositiveDefinite,
    Infeasible,
}

/// Constant terms of the linearized constraints. Normally the constraint
/// values at the current point; shifted for a second-order correction.
struct Linearization<'a> {
    c_eq: &'a DVector<f64>,
    c_in: &'a DVector<f64>,
}

fn is_finite_bound(v: f64) -> bool {
    v.is_finite() && v.abs() < 1e19
}

/// Chooses the null-space QP when the equality Jacobian has full row rank
/// and the full-space QP otherwise (and always in elastic mode).
fn qp_direction(
    b: &DMatrix<f64>,
    ev: &Evaluation,
    lin: &Linearization,
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    elastic_penalty: Option<f64>,
) -> Result<Direction, QpFailure> {
    let (n, me) = (x.len(), lin.c_eq.len());
    if elastic_penalty.is_none() && me > 0 && me < n {
        if let Some(r) = nullspace_direction(b, ev, lin, x, lower, upper) {
            return r;
        }
    }
    full_direction(b, ev, lin, x, lower, upper, elastic_penalty)
}

/// Same QP as [`full_direction`] without slacks, solved in the null space of
/// the equality Jacobian: with J_eᵀ = [Y Z] [R; 0], every step satisfying the
/// linearized equalities is d = d₀ + Z p. Returns `None` when J_e is
/// numerically rank deficient.
fn nullspace_direction(
    b: &DMatrix<f64>,
    ev: &Evaluation,
    lin: &Linearization,
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Option<Result<Direction, QpFailure>> {
    let n = x.len();
    let me = lin.c_eq.len();
    let mi = lin.c_in.len();
    let nz = n - me;
    let qr = ev.j_eq.transpose().qr();
    let r = qr.r();
    let dmax = r.diagonal().amax();
    if !(dmax > 0.0) || r.diagonal().iter().any(|v| !(v.abs() > 1e-10 * dmax)) {
        return None;
    }
    let mut qt = DMatrix::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let y_basis = qt.rows(0, me).transpose();
    let z = qt.rows(me, nz).transpose();
    // J_e d₀ = -c_e  ⇔  Rᵀ w = -c_e, d₀ = Y w
    let w = r.transpose().solve_lower_triangular(&(-lin.c_eq))?;
    let d0 = &y_basis * w;

    let bz = b * &z;
    let h = z.tr_mul(&bz);
    let g_r = z.tr_mul(&(&ev.grad + b * &d0));
    let mut q = vec![0.0; nz * nz];
    for i in 0..nz {
        for j in 0..nz {
            q[i * nz + j] = 0.5 * (h[(i, j)] + h[(j, i)]);
        }
    }
    let lower_idx: Vec<usize> = (0..n).filter(|&k| is_finite_bound(lower[k])).collect();
    let upper_idx: Vec<usize> = (0..n).filter(|&k| is_finite_bound(upper[k])).collect();
    let n_rows = mi + lower_idx.len() + upper_idx.len();
    let mut a = vec![0.0; n_rows * nz];
    let mut bv = vec![0.0; n_rows];
    let jiz = &ev.j_in * &z;
    let jid = &ev.j_in * &d0;
    for rr in 0..mi {
        for k in 0..nz {
            a[rr * nz + k] = -jiz[(rr, k)];
        }
        bv[rr] = lin.c_in[rr] + jid[rr];
    }
    let mut row = mi;
    for &k in &lower_idx {
        for j in 0..nz {
            a[row * nz + j] = -z[(k, j)];
        }
        bv[row] = x[k] - lower[k] + d0[k];
        row += 1;
    }
    for &k in &upper_idx {
        for j in 0..nz {
            a[row * nz + j] = z[(k, j)];
        }
        bv[row] = upper[k] - x[k] - d0[k];
        row += 1;
    }

    let sol = match quadprog::solve_qp(&mut q, g_r.as_slice(), &a, &bv, 0, false) {
        Ok(s) => s,
        Err(quadprog::Error::NotPositiveDefinite) => return Some(Err(QpFailure::NotPositiveDefinite)),
        Err(_) => return Some(Err(QpFailure::Infeasible)),
    };
    let d = &d0 + &z * DVector::from_column_slice(&sol.sol);
    let mu_in = DVector::from_fn(mi, |rr, _| sol.lagr[rr]);
    let mut z_lower = DVector::zeros(n);
    let mut z_upper = DVector::zeros(n);
    let mut rr = mi;
    for &k in &lower_idx {
        z_lower[k] = sol.lagr[rr];
        rr += 1;
    }
    for &k in &upper_idx {
        z_upper[k] = sol.lagr[rr];
        rr += 1;
    }
    // J_eᵀλ = B d + g − J_iᵀμ − z_l + z_u, solved with the same factors.
    let mut rhs = b * &d + &ev.grad - &z_lower + &z_upper;
    if mi > 0 {
        rhs -= ev.j_in.tr_mul(&mu_in);
    }
    let lambda_eq = r.solve_upper_triangular(&y_basis.tr_mul(&rhs))?;
    Some(Ok(Direction { d, lambda_eq, mu_in, z_lower, z_upper, lin_viol: 0.0, elastic: false }))
}

/// Solves
///
/// ```text
/// min ½ dᵀBd + gᵀd   s.t.  J_e d + c_e = 0,  J_i d + c_i ≥ 0,  lb ≤ x + d ≤ ub
/// ```
///
/// optionally in elastic form, where the general constraints are relaxed by
/// nonnegative slacks carrying an l1 penalty.
fn full_direction(
    b: &DMatrix<f64>,
    ev: &Evaluation,
    lin: &Linearization,
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    elastic_penalty: Option<f64>,
) -> Result<Direction, QpFailure> {
    let n = x.len();
    let me = lin.c_eq.len();
    let mi = lin.c_in.len();
    let (ns, elastic, rho) = match elastic_penalty {
        Some(rho) => (2 * me + mi, true, rho),
        None => (0, false, 0.0),
    };
    let nv = n + ns;
    let lower_idx: Vec<usize> = (0..n).filter(|&k| is_finite_bound(lower[k])).collect();
    let upper_idx: Vec<usize> = (0..n).filter(|&k| is_finite_bound(upper[k])).collect();
    let n_rows = me + mi + lower_idx.len() + upper_idx.len() + ns;

    let mut q = vec![0.0; nv * nv];
    for i in 0..n {
        for j in 0..n {
            q[i * nv + j] = 0.5 * (b[(i, j)] + b[(j, i)]);
        }
    }
    let mut c = vec![0.0; nv];
    c[..n].copy_from_slice(ev.grad.as_slice());
    if elastic {
        let eps = 1e-8 * (0..n).map(|i| b[(i, i)].abs()).fold(1.0, f64::max);
        for s in n..nv {
            q[s * nv + s] = eps;
            c[s] = rho;
        }
    }

    let mut a = vec![0.0; n_rows * nv];
    let mut bv = vec![0.0; n_rows];
    let mut row = 0;
    // J_e d (- p + q) = -c_e
    for r in 0..me {
        for k in 0..n {
            a[row * nv + k] = ev.j_eq[(r, k)];
        }
        if elastic {
            a[row * nv + n + r] = -1.0;
            a[row * nv + n + me + r] = 1.0;
        }
        bv[row] = -lin.c_eq[r];
        row += 1;
    }
    // -J_i d (- t) <= c_i
    for r in 0..mi {
        for k in 0..n {
            a[row * nv + k] = -ev.j_in[(r, k)];
        }
        if elastic {
            a[row * nv + n + 2 * me + r] = -1.0;
        }
        bv[row] = lin.c_in[r];
        row += 1;
    }
    for &k in &lower_idx {
        a[row * nv + k] = -1.0;
        bv[row] = x[k] - lower[k];
        row += 1;
    }
    for &k in &upper_idx {
        a[row * nv + k] = 1.0;
        bv[row] = upper[k] - x[k];
        row += 1;
    }
    for s in n..nv {
        a[row * nv + s] = -1.0;
        row += 1;
    }
    debug_assert_eq!(row, n_rows);

    let sol = match quadprog::solve_qp(&mut q.clone(), &c, &a, &bv, me, false) {
        Ok(s) => s,
        Err(quadprog::Error::NotPositiveDefinite) => return Err(QpFailure::NotPositiveDefinite),
        Err(_) => return Err(QpFailure::Infeasible),
    };
    let y = DVector::from_vec(sol.sol);
    let lagr = sol.lagr;

    // The solver reports equality multipliers as magnitudes only; recover
    // their signs from QP stationarity  Q y + c + A_eqᵀ λ' + A_inᵀ μ = 0.
    let mut lambda_eq = DVector::zeros(me);
    if me > 0 {
        let mut rhs = DVector::from_fn(nv, |i, _| {
            -(c[i] + (0..nv).map(|j| q[i * nv + j] * y[j]).sum::<f64>())
        });
        for (r, &m) in lagr.iter().enumerate().skip(me) {
            if m != 0.0 {
                for k in 0..nv {
                    rhs[k] -= a[r * nv + k] * m;
                }
            }
        }
        let aeq_t = DMatrix::from_fn(nv, me, |k, r| a[r * nv + k]);
        let svd = aeq_t.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max();
        if let Ok(l) = svd.solve(&rhs, tol) {
            // NLP convention: grad f = J_eᵀλ + J_iᵀμ + z_l - z_u
            lambda_eq = -l;
        }
    }
    let mu_in = DVector::from_fn(mi, |r, _| lagr[me + r]);
    let mut z_lower = DVector::zeros(n);
    let mut z_upper = DVector::zeros(n);
    let mut r = me + mi;
    for &k in &lower_idx {
        z_lower[k] = lagr[r];
        r += 1;
    }
    for &k in &upper_idx {
        z_upper[k] = lagr[r];
        r += 1;
    }
    let lin_viol = if elastic { y.rows(n, ns).iter().map(|v| v.max(0.0)).sum() } else { 0.0 };
    Ok(Direction {
        d: y.rows(0, n).into_owned(),
        lambda_eq,
        mu_in,
        z_lower,
        z_upper,
        lin_viol,
        elastic,
    })
}

/// l1 constraint violation used by the merit function. Residuals below
/// `floor` are round-off and do not count.
fn violation(ev: &Evaluation, floor: f64) -> f64 {
    ev.c_eq.iter().map(|v| (v.abs() - floor).max(0.0)).sum::<f64>()
        + ev.c_in.iter().map(|v| (-v - floor).max(0.0)).sum::<f64>()
}

fn max_violation(ev: &Evaluation) -> f64 {
    let e = ev.c_eq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ev.c_in.iter().fold(e, |m, v| m.max(-v))
}

fn lagrangian_grad(ev: &Evaluation, dir: &Direction) -> DVector<f64> {
    let mut g = ev.grad.clone();
    if !dir.lambda_eq.is_empty() {
        g -= ev.j_eq.tr_mul(&dir.lambda_eq);
    }
    if !dir.mu_in.is_empty() {
        g -= ev.j_in.tr_mul(&dir.mu_in);
    }
    g
}

struct Residuals {
    stationarity: f64,
    feasibility: f64,
    complementarity: f64,
}

fn kkt_residuals(ev: &Evaluation, dir: &Direction, x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Residuals {
    let g = lagrangian_grad(ev, dir) - &dir.z_lower + &dir.z_upper;
    let mut comp = 0.0f64;
    for (m, c) in dir.mu_in.iter().zip(ev.c_in.iter()) {
        comp = comp.max((m * c).abs());
    }
    for k in 0..x.len() {
        if is_finite_bound(lower[k]) {
            comp = comp.max((dir.z_lower[k] * (x[k] - lower[k])).abs());
        }
        if is_finite_bound(upper[k]) {
            comp = comp.max((dir.z_upper[k] * (upper[k] - x[k])).abs());
        }
    }
    Residuals { stationarity: g.amax(), feasibility: max_violation(ev).max(0.0), complementarity: comp }
}

struct Snapshot {
    x: DVector<f64>,
    f: f64,
    lambda_eq: DVector<f64>,
    mu_in: DVector<f64>,
    z_lower: DVector<f64>,
    z_upper: DVector<f64>,
    res: Residuals,
}

impl Snapshot {
    /// Feasible points beat infeasible ones; among feasible points the
    /// lower objective wins, otherwise the smaller violation.
    fn better_than(&self, other: &Snapshot, feas_tol: f64) -> bool {
        let a = self.res.feasibility <= feas_tol;
        let b = other.res.feasibility <= feas_tol;
        match (a, b) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.f < other.f,
            (false, false) => self.res.feasibility < other.res.feasibility,
        }
    }
}

fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, damping: f64) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-300) || !sbs.is_finite() {
        return;
    }
    let sy = s.dot(y);
    let r = if sy >= damping * sbs {
        y.clone()
    } else {
        let t = (1.0 - damping) * sbs / (sbs - sy);
        y * t + &bs * (1.0 - t)
    };
    let sr = s.dot(&r);
    if !(sr > 0.0) || !sr.is_finite() {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &r * r.transpose() / sr;
    // Keep exact symmetry against rounding drift.
    let bt = b.transpose();
    *b += bt;
    *b *= 0.5;
}

fn clamp(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].max(lower[i]).min(upper[i]))
}

/// Solves an NLP by SQP with a damped-BFGS Hessian, an l1 merit function
/// with Armijo backtracking and a second-order correction on rejected full
/// steps. Infeasible QP subproblems fall back to an elastic formulation.
///
/// Unless the initial point cannot be evaluated, a result is always
/// returned; when the status is not `Converged` it holds the best iterate
/// seen (feasible points preferred).
pub fn solve(problem: &NLProblem, cfg: &SolverConfig) -> Result<KKTResult, NlpError> {
    let start = Instant::now();
    problem.check()?;
    let fns = problem.functions.as_ref();
    let n = fns.n_vars();
    let (lower, upper) = (&problem.lower, &problem.upper);
    let mut x = clamp(&problem.x0, lower, upper);
    let mut ev = fns.evaluate(&x).map_err(|e| NlpError::InitialPoint(Box::new(e)))?;
    if ev.c_eq.len() != fns.n_eq() || ev.c_in.len() != fns.n_ineq() || ev.grad.len() != n {
        return Err(NlpError::Dimension("evaluation sizes disagree with the declared problem".into()));
    }
    let mut b = problem.hessian0.clone().unwrap_or_else(|| DMatrix::identity(n, n));
    let mut penalty = 0.0f64;
    let mut best: Option<Snapshot> = None;
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut just_reset = false;

    for iter in 0..cfg.max_iter {
        iterations = iter + 1;
        let lin = Linearization { c_eq: &ev.c_eq, c_in: &ev.c_in };
        let dir = match qp_direction(&b, &ev, &lin, &x, lower, upper, None) {
            Ok(d) => d,
            Err(QpFailure::NotPositiveDefinite) => {
                b = DMatrix::identity(n, n);
                continue;
            }
            Err(QpFailure::Infeasible) => {
                let rho = cfg.elastic_factor * penalty.max(1.0);
                match qp_direction(&b, &ev, &lin, &x, lower, upper, Some(rho)) {
                    Ok(d) => d,
                    Err(_) => {
                        status = SolveStatus::InfeasibleQp;
                        break;
                    }
                }
            }
        };

        let res = kkt_residuals(&ev, &dir, &x, lower, upper);
        let snap = Snapshot {
            x: x.clone(),
            f: ev.f,
            lambda_eq: dir.lambda_eq.clone(),
            mu_in: dir.mu_in.clone(),
            z_lower: dir.z_lower.clone(),
            z_upper: dir.z_upper.clone(),
            res,
        };
        let done = !dir.elastic
            && snap.res.stationarity <= cfg.kkt_tol
            && snap.res.feasibility <= cfg.kkt_tol
            && snap.res.complementarity <= cfg.kkt_tol;
        if done {
            return Ok(finish(snap, SolveStatus::Converged, iterations, start, b));
        }
        if best.as_ref().is_none_or(|bst| snap.better_than(bst, cfg.kkt_tol)) {
            best = Some(snap);
        }

        let mult = dir.lambda_eq.amax().max(dir.mu_in.amax());
        if penalty < 1.1 * mult {
            penalty = 1.5 * mult;
        }
        penalty = penalty.max(1e-6);
        let floor = 1e-3 * cfg.kkt_tol;
        let viol0 = violation(&ev, floor);
        let phi0 = ev.f + penalty * viol0;
        let mut slope = ev.grad.dot(&dir.d) - penalty * (viol0 - dir.lin_viol);
        if slope >= 0.0 {
            // Rounding in a nearly converged QP; still require decrease.
            slope = -1e-16 * phi0.abs().max(1.0);
        }
        let merit = |e: &Evaluation| e.f + penalty * violation(e, floor);

        let mut alpha = 1.0;
        let mut accepted: Option<(DVector<f64>, Evaluation)> = None;
        while alpha >= cfg.min_step {
            let xt = clamp(&(&x + &dir.d * alpha), lower, upper);
            match fns.evaluate(&xt) {
                Ok(et) => {
                    let m = merit(&et);
                    // Near a solution the predicted decrease drops below the
                    // resolution of the merit value; a full step that does
                    // not raise it beyond round-off is taken as is.
                    let roundoff = alpha == 1.0 && m - phi0 <= 1e-14 * phi0.abs().max(1.0);
                    if m <= phi0 + cfg.armijo * alpha * slope || roundoff {
                        accepted = Some((xt, et));
                        break;
                    }
                    if alpha == 1.0 {
                        if let Some(soc) = second_order_correction(&b, &ev, &et, &dir, &x, lower, upper, fns) {
                            if merit(&soc.1) <= phi0 + cfg.armijo * slope {
                                accepted = Some(soc);
                                break;
                            }
                        }
                    }
                }
                Err(e) => log::trace!("sqp: trial point rejected: {e}"),
            }
            alpha *= cfg.backtrack;
        }

        // A step lost in the last bits of x is no progress.
        let tiny = 1e-14 * x.amax().max(1.0);
        let accepted = accepted.filter(|(xn, _)| (xn - &x).amax() > tiny);
        let Some((xn, en)) = accepted else {
            if just_reset {
                status = SolveStatus::LineSearchFailure;
                break;
            }
            b = DMatrix::identity(n, n);
            just_reset = true;
            continue;
        };
        just_reset = false;
        let s = &xn - &x;
        let y = lagrangian_grad(&en, &dir) - lagrangian_grad(&ev, &dir);
        bfgs_update(&mut b, &s, &y, cfg.bfgs_damping);
        x = xn;
        ev = en;
    }

    let snap = match best {
        Some(s) => s,
        None => Snapshot {
            res: Residuals {
                stationarity: f64::INFINITY,
                feasibility: max_violation(&ev).max(0.0),
                complementarity: f64::INFINITY,
            },
            x,
            f: ev.f,
            lambda_eq: DVector::zeros(fns.n_eq()),
            mu_in: DVector::zeros(fns.n_ineq()),
            z_lower: DVector::zeros(n),
            z_upper: DVector::zeros(n),
        },
    };
    Ok(finish(snap, status, iterations, start, b))
}

#[allow(clippy::too_many_arguments)]
fn second_order_correction(
    b: &DMatrix<f64>,
    ev: &Evaluation,
    trial: &Evaluation,
    dir: &Direction,
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    fns: &dyn super::NlpFunctions,
) -> Option<(DVector<f64>, Evaluation)> {
    if dir.elastic || max_violation(trial) <= 0.0 {
        return None;
    }
    let c_eq = &trial.c_eq - &ev.j_eq * &dir.d;
    let c_in = &trial.c_in - &ev.j_in * &dir.d;
    let lin = Linearization { c_eq: &c_eq, c_in: &c_in };
    let soc = qp_direction(b, ev, &lin, x, lower, upper, None).ok()?;
    let xs = clamp(&(x + &soc.d), lower, upper);
    let es = fns.evaluate(&xs).ok()?;
    Some((xs, es))
}

fn finish(s: Snapshot, status: SolveStatus, iterations: usize, start: Instant, hessian: DMatrix<f64>) -> KKTResult {
    KKTResult {
        x: s.x,
        objective: s.f,
        lambda_eq: s.lambda_eq,
        mu_ineq: s.mu_in,
        z_lower: s.z_lower,
        z_upper: s.z_upper,
        stationarity: s.res.stationarity,
        feasibility: s.res.feasibility,
        complementarity: s.res.complementarity,
        status,
        iterations,
        wall_time: start.elapsed(),
        hessian,
    }
}
