use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::model::{ControlInputs, DisturbanceState, NetworkState, Rig, ThetaVector};

type Eval = Box<dyn Fn(&DVector<f64>) -> Evaluation + Send + Sync>;

/// Closure-backed NLP for solver tests.
struct Toy {
    n: usize,
    me: usize,
    mi: usize,
    eval: Eval,
}

impl NlpFunctions for Toy {
    fn n_vars(&self) -> usize {
        self.n
    }
    fn n_eq(&self) -> usize {
        self.me
    }
    fn n_ineq(&self) -> usize {
        self.mi
    }
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, NlpError> {
        Ok((self.eval)(x))
    }
}

fn unbounded(n: usize) -> (DVector<f64>, DVector<f64>) {
    (DVector::from_element(n, f64::NEG_INFINITY), DVector::from_element(n, f64::INFINITY))
}

#[test]
fn bounded_scalar_quadratic() {
    let toy = Toy {
        n: 1,
        me: 0,
        mi: 0,
        eval: Box::new(|x| Evaluation {
            f: (x[0] - 3.0).powi(2),
            grad: DVector::from_element(1, 2.0 * (x[0] - 3.0)),
            c_eq: DVector::zeros(0),
            j_eq: DMatrix::zeros(0, 1),
            c_in: DVector::zeros(0),
            j_in: DMatrix::zeros(0, 1),
        }),
    };
    let p = NLProblem::new(Box::new(toy), DVector::from_element(1, 1.0), DVector::from_element(1, 5.0), DVector::from_element(1, 1.0));
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert!(r.converged());
    assert!((r.x[0] - 3.0).abs() < 1e-8);
}

#[test]
fn linear_toy_allocates_by_price() {
    let toy = Toy {
        n: 3,
        me: 0,
        mi: 1,
        eval: Box::new(|x| Evaluation {
            f: -(20.0 * x[0] + 10.0 * x[1] + 30.0 * x[2]),
            grad: DVector::from_vec(vec![-20.0, -10.0, -30.0]),
            c_eq: DVector::zeros(0),
            j_eq: DMatrix::zeros(0, 3),
            c_in: DVector::from_element(1, 7.5 - x.sum()),
            j_in: DMatrix::from_element(1, 3, -1.0),
        }),
    };
    let p = NLProblem::new(Box::new(toy), DVector::from_element(3, 1.0), DVector::from_element(3, 5.0), DVector::from_element(3, 2.0));
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert!(r.converged(), "{:?}", r.status);
    let expect = [1.5, 1.0, 5.0];
    for k in 0..3 {
        assert!((r.x[k] - expect[k]).abs() < 1e-8, "{}", r.x);
    }
    // Gas availability prices at 20 (well 1 is the marginal user).
    assert!((r.mu_ineq[0] - 20.0).abs() < 1e-6);
}

#[test]
fn equality_constrained_quadratic_matches_closed_form() {
    // min ½xᵀQx + cᵀx  s.t.  Ax = b
    let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
    let c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, -1.0, 2.0]);
    let b = DVector::from_vec(vec![1.0, 0.5]);
    // KKT system [Q -Aᵀ; A 0][x; λ] = [-c; b]
    let mut k = DMatrix::zeros(5, 5);
    k.view_mut((0, 0), (3, 3)).copy_from(&q);
    k.view_mut((0, 3), (3, 2)).copy_from(&(-a.transpose()));
    k.view_mut((3, 0), (2, 3)).copy_from(&a);
    let mut rhs = DVector::zeros(5);
    rhs.rows_mut(0, 3).copy_from(&(-&c));
    rhs.rows_mut(3, 2).copy_from(&b);
    let sol = k.lu().solve(&rhs).unwrap();

    let (qq, cc, aa, bb) = (q.clone(), c.clone(), a.clone(), b.clone());
    let toy = Toy {
        n: 3,
        me: 2,
        mi: 0,
        eval: Box::new(move |x| Evaluation {
            f: 0.5 * x.dot(&(&qq * x)) + cc.dot(x),
            grad: &qq * x + &cc,
            c_eq: &aa * x - &bb,
            j_eq: aa.clone(),
            c_in: DVector::zeros(0),
            j_in: DMatrix::zeros(0, 3),
        }),
    };
    let (lo, hi) = unbounded(3);
    let p = NLProblem::new(Box::new(toy), lo, hi, DVector::zeros(3));
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert!(r.converged());
    for i in 0..3 {
        assert!((r.x[i] - sol[i]).abs() < 1e-10, "{} vs {}", r.x, sol);
    }
    for i in 0..2 {
        assert!((r.lambda_eq[i] - sol[3 + i]).abs() < 1e-9, "{} vs {}", r.lambda_eq, sol);
    }
}

/// Hock–Schittkowski problem 71.
fn hs071() -> NLProblem {
    let toy = Toy {
        n: 4,
        me: 1,
        mi: 1,
        eval: Box::new(|x| {
            let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
            Evaluation {
                f: a * d * (a + b + c) + c,
                grad: DVector::from_vec(vec![d * (2.0 * a + b + c), a * d, a * d + 1.0, a * (a + b + c)]),
                c_eq: DVector::from_element(1, a * a + b * b + c * c + d * d - 40.0),
                j_eq: DMatrix::from_row_slice(1, 4, &[2.0 * a, 2.0 * b, 2.0 * c, 2.0 * d]),
                c_in: DVector::from_element(1, a * b * c * d - 25.0),
                j_in: DMatrix::from_row_slice(1, 4, &[b * c * d, a * c * d, a * b * d, a * b * c]),
            }
        }),
    };
    NLProblem::new(Box::new(toy), DVector::from_element(4, 1.0), DVector::from_element(4, 5.0), DVector::from_vec(vec![1.0, 5.0, 5.0, 1.0]))
}

#[test]
fn hock_schittkowski_71() {
    let r = solve(&hs071(), &SolverConfig::default()).unwrap();
    assert!(r.converged(), "{:?} after {}", r.status, r.iterations);
    let expect = [1.0, 4.742_999_64, 3.821_149_98, 1.379_408_29];
    for k in 0..4 {
        assert!((r.x[k] - expect[k]).abs() < 1e-6, "{}", r.x);
    }
    assert!((r.objective - 17.014_017_3).abs() < 1e-6);
    assert!(r.feasibility <= 1e-8);
}

#[test]
fn solver_is_deterministic() {
    let a = solve(&hs071(), &SolverConfig::default()).unwrap();
    let b = solve(&hs071(), &SolverConfig::default()).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn infeasible_linearization_recovers() {
    // Start where the linearized equality x² = 1 has a zero gradient.
    let toy = Toy {
        n: 1,
        me: 1,
        mi: 0,
        eval: Box::new(|x| Evaluation {
            f: x[0],
            grad: DVector::from_element(1, 1.0),
            c_eq: DVector::from_element(1, x[0] * x[0] - 1.0),
            j_eq: DMatrix::from_element(1, 1, 2.0 * x[0]),
            c_in: DVector::zeros(0),
            j_in: DMatrix::zeros(0, 1),
        }),
    };
    let p = NLProblem::new(Box::new(toy), DVector::from_element(1, -3.0), DVector::from_element(1, 3.0), DVector::from_element(1, 0.0));
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert!(r.converged(), "{:?}", r.status);
    assert!((r.x[0] + 1.0).abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Random strictly convex QPs with equality and inequality rows: the
    /// solver output satisfies the KKT conditions.
    #[test]
    fn random_convex_qps_satisfy_kkt(
        seed in proptest::collection::vec(-1.0f64..1.0, 4 * 4 + 4 + 4 + 1 + 2 * 4 + 2),
    ) {
        let n = 4;
        let m = DMatrix::from_row_slice(n, n, &seed[0..16]);
        let q = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
        let c = DVector::from_row_slice(&seed[16..20]);
        let a_eq = DMatrix::from_row_slice(1, n, &seed[20..24]) + DMatrix::from_element(1, n, 2.0);
        let b_eq = seed[24];
        let a_in = DMatrix::from_row_slice(2, n, &seed[25..33]);
        let b_in = DVector::from_row_slice(&seed[33..35]);
        let (qq, cc, ae, ai, bi) = (q.clone(), c.clone(), a_eq.clone(), a_in.clone(), b_in.clone());
        let toy = Toy {
            n,
            me: 1,
            mi: 2,
            eval: Box::new(move |x| Evaluation {
                f: 0.5 * x.dot(&(&qq * x)) + cc.dot(x),
                grad: &qq * x + &cc,
                c_eq: DVector::from_element(1, (&ae * x)[0] - b_eq),
                j_eq: ae.clone(),
                // a_in x + b_in + 3 >= 0 keeps the origin strictly feasible
                c_in: &ai * x + &bi + DVector::from_element(2, 3.0),
                j_in: ai.clone(),
            }),
        };
        let p = NLProblem::new(Box::new(toy), DVector::from_element(n, -10.0), DVector::from_element(n, 10.0), DVector::zeros(n));
        let r = solve(&p, &SolverConfig::default()).unwrap();
        prop_assert!(r.converged(), "{:?}", r.status);
        prop_assert!(r.stationarity <= 1e-8 && r.feasibility <= 1e-8 && r.complementarity <= 1e-8);
        prop_assert!(r.mu_ineq.iter().all(|m| *m >= 0.0));
        // independent stationarity check
        let g = &q * &r.x + &c - a_eq.transpose() * &r.lambda_eq - a_in.transpose() * &r.mu_ineq - &r.z_lower + &r.z_upper;
        prop_assert!(g.amax() < 1e-7, "{}", g);
    }
}

fn initial_dist() -> DisturbanceState {
    DisturbanceState::new([0.8, 0.6, 0.8], 0.3, 101_325.0)
}

fn econ(rig: &Rig, theta: &ThetaVector, dist: &DisturbanceState, weights: &EconWeights) -> (KKTResult, SsEconSolution) {
    let p = build_ss_econ(rig, theta, dist, weights, &SsEconConstraints::default(), &ControlInputs::uniform(2.5), &NetworkState::nominal());
    let r = solve(&p, &SolverConfig::default()).unwrap();
    let s = SsEconSolution::decode(&r.x, r.objective);
    (r, s)
}

#[test]
fn ss_econ_derivatives_match_finite_differences() {
    let rig = Rig::default();
    let p = build_ss_econ(&rig, &ThetaVector::default(), &initial_dist(), &EconWeights::default(), &SsEconConstraints::default(), &ControlInputs { q_g: [2.0, 3.0, 2.5] }, &NetworkState::nominal());
    let mut x = p.x0.clone();
    x[4] *= 1.01;
    x[8] *= 0.999;
    let err = derivative_check(p.functions.as_ref(), &x, 1e-5).unwrap();
    assert!(err.worst < 1e-6, "{err:?}");
}

#[test]
fn ss_econ_respects_gas_availability_and_prioritises_well_three() {
    let rig = Rig::default();
    let (r, s) = econ(&rig, &ThetaVector::default(), &initial_dist(), &EconWeights::default());
    assert!(r.converged(), "{:?}", r.status);
    assert!(s.q_g.iter().sum::<f64>() <= 7.5 + 1e-8);
    assert!(s.q_g[2] > s.q_g[1]);
}

#[test]
fn symmetric_wells_share_gas_equally() {
    let rig = Rig::default();
    let dist = DisturbanceState::new([0.7; 3], 0.3, 101_325.0);
    let (r, s) = econ(&rig, &ThetaVector::default(), &dist, &EconWeights { price: [20.0; 3] });
    assert!(r.converged());
    for q in s.q_g {
        assert!((q - 2.5).abs() < 1e-6, "{:?}", s.q_g);
    }
}

#[test]
fn ss_econ_agrees_with_grid_oracle() {
    let rig = Rig::default();
    let theta = ThetaVector { res: [6.0e-5, 6.6e-5, 6.2e-5], top: [8.4e-5, 7.9e-5, 8.1e-5] };
    let dist = DisturbanceState::new([0.5, 0.6, 0.9], 0.3, 101_325.0);
    let w = EconWeights::default();
    let (r, s) = econ(&rig, &theta, &dist, &w);
    assert!(r.converged());
    let o = brute_force_ss_oracle(&rig, &theta, &dist, &w, &SsEconConstraints::default(), 0.1);
    assert!(o.evaluated <= 68_921);
    assert!(o.profit <= s.profit + 1e-6);
    for k in 0..3 {
        assert!((o.q_g[k] - s.q_g[k]).abs() <= 0.1 + 1e-9, "{:?} vs {:?}", o.q_g, s.q_g);
    }
}

#[test]
fn projection_keeps_setpoints_feasible() {
    let c = SsEconConstraints::default();
    let p = c.project([3.1, 3.0, 2.5]);
    assert!(c.is_feasible(&p, 0.0), "{p:?}");
    // clipped to (1, 5, 2); the 0.5 excess is taken in proportion to the
    // room above the lower bound (0, 4, 1)
    let p = c.project([0.0, 9.0, 2.0]);
    for (a, b) in p.iter().zip([1.0, 4.6, 1.9]) {
        assert!((a - b).abs() < 1e-12, "{p:?}");
    }
    assert_eq!(c.project([2.5; 3]), [2.5; 3]);
}

fn fit_data(rig: &Rig, theta: &ThetaVector, q: [f64; 3], dist: &DisturbanceState) -> crate::model::ModelOutputs {
    let inputs = ControlInputs { q_g: q };
    let x = rig.steady_state_solve(&inputs, dist, theta, &NetworkState::nominal()).unwrap();
    rig.measurement_map(&x, &rig.gas_mass_flows(&inputs), dist, theta).unwrap()
}

fn fit_bounds() -> ([f64; 6], [f64; 6]) {
    let nominal = ThetaVector::default().to_array();
    (nominal.map(|v| 0.5 * v), nominal.map(|v| 2.0 * v))
}

#[test]
fn ss_fit_recovers_parameters_from_noiseless_data() {
    let rig = Rig::default();
    let dist = initial_dist();
    let truth = ThetaVector { res: [5.8e-5, 6.9e-5, 6.1e-5], top: [8.6e-5, 7.7e-5, 8.0e-5] };
    let y = fit_data(&rig, &truth, [2.0, 3.0, 2.5], &dist);
    let (lo, hi) = fit_bounds();
    let (p, layout) = build_ss_fit(
        &rig,
        &y,
        &ControlInputs { q_g: [2.0, 3.0, 2.5] },
        &dist,
        FitParameterSet::ThetaTop,
        &DMatrix::identity(6, 6),
        lo,
        hi,
        ThetaVector::default().to_array(),
        &ThetaVector::default(),
        &NetworkState::nominal(),
    )
    .unwrap();
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert!(r.converged(), "{:?}", r.status);
    let s = layout.decode(&r.x, r.objective, &ThetaVector::default());
    for (a, b) in s.params.iter().zip(truth.to_array()) {
        assert!((a / b - 1.0).abs() < 1e-6, "{:?}", s.params);
    }
}

#[test]
fn ss_fit_objective_is_sum_of_squares_with_identity_weights() {
    let rig = Rig::default();
    let dist = initial_dist();
    let mut y = fit_data(&rig, &ThetaVector::default(), [2.5; 3], &dist);
    // Pin the parameters by collapsing their bounds so residuals remain.
    let nominal = ThetaVector::default().to_array();
    y.q_l[0] += 0.3;
    y.p_rh[2] -= 200.0;
    let (p, layout) = build_ss_fit(
        &rig, &y, &ControlInputs::uniform(2.5), &dist, FitParameterSet::ThetaTop, &DMatrix::identity(6, 6), nominal, nominal, nominal,
        &ThetaVector::default(), &NetworkState::nominal(),
    )
    .unwrap();
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert!(r.converged(), "{:?}", r.status);
    let s = layout.decode(&r.x, r.objective, &ThetaVector::default());
    let expect = 0.3f64.powi(2) + 0.2f64.powi(2);
    assert!((s.objective - expect).abs() < 1e-9, "{}", s.objective);
}

#[test]
fn ss_fit_derivatives_match_finite_differences() {
    let rig = Rig::default();
    let dist = initial_dist();
    let y = fit_data(&rig, &ThetaVector::default(), [2.5; 3], &dist);
    let (lo, hi) = fit_bounds();
    for set in [FitParameterSet::ThetaTop, FitParameterSet::AlphaL] {
        let (plo, phi, guess) = match set {
            FitParameterSet::ThetaTop => (lo, hi, ThetaVector::default().to_array()),
            FitParameterSet::AlphaL => {
                let r = ThetaVector::default().res;
                ([lo[0], lo[1], lo[2], 0.0, 0.0, 0.0], [hi[0], hi[1], hi[2], 1.0, 1.0, 1.0], [r[0], r[1], r[2], 0.9996, 0.9996, 0.9996])
            }
        };
        let (p, _) = build_ss_fit(&rig, &y, &ControlInputs::uniform(2.5), &dist, set, &DMatrix::identity(6, 6), plo, phi, guess, &ThetaVector::default(), &NetworkState::nominal()).unwrap();
        let mut x = p.x0.clone();
        x[0] *= 1.01;
        x[7] *= 1.01;
        // Liquid holdup near a full riser makes the pressures stiff in m_l;
        // a small step is needed and round-off then sets the floor.
        let err = derivative_check(p.functions.as_ref(), &x, 1e-5).unwrap();
        assert!(err.worst < 1e-5, "{set:?}: {err:?}");
    }
}

#[test]
fn radau_rows_reproduce_abscissae() {
    for j in 0..3 {
        let s: f64 = RADAU_A[j].iter().sum();
        assert!((s - RADAU_C[j]).abs() < 1e-15);
    }
    // Quadrature weights integrate t^k exactly for k ≤ 4.
    for k in 0..5 {
        let q: f64 = (0..3).map(|j| RADAU_A[2][j] * RADAU_C[j].powi(k)).sum();
        assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
    }
}

struct DrtoCase {
    rig: Rig,
    theta: ThetaVector,
    dist: DisturbanceState,
    x_hat: NetworkState,
    u_prev: ControlInputs,
}

fn drto_case(u_prev: [f64; 3]) -> DrtoCase {
    let rig = Rig::default();
    let theta = ThetaVector::default();
    let dist = initial_dist();
    let u_prev = ControlInputs { q_g: u_prev };
    let x_hat = rig.steady_state_solve(&u_prev, &dist, &theta, &NetworkState::nominal()).unwrap();
    DrtoCase { rig, theta, dist, x_hat, u_prev }
}

fn drto_solve(c: &DrtoCase, grid: &CollocationGrid, settings: &DrtoSettings) -> (KKTResult, DrtoLayout) {
    let (p, lay) = build_drto(&c.rig, &c.theta, &c.x_hat, &c.u_prev, &c.dist, grid, settings, &EconWeights::default(), &SsEconConstraints::default(), None).unwrap();
    (solve(&p, &SolverConfig::default()).unwrap(), lay)
}

#[test]
fn drto_derivatives_match_finite_differences() {
    let c = drto_case([2.0, 2.5, 3.0]);
    let (p, _) = build_drto(&c.rig, &c.theta, &c.x_hat, &ControlInputs::uniform(2.2), &c.dist, &CollocationGrid { n_p: 3, t_p: 10.0 }, &DrtoSettings::default(), &EconWeights::default(), &SsEconConstraints::default(), None).unwrap();
    let err = derivative_check(p.functions.as_ref(), &p.x0, 1e-5).unwrap();
    assert!(err.worst < 1e-6, "{err:?}");
}

#[test]
fn drto_with_huge_move_penalty_holds_inputs() {
    let c = drto_case([2.0, 2.5, 3.0]);
    let (r, lay) = drto_solve(&c, &CollocationGrid::default(), &DrtoSettings { r_weight: 1e9, du_max: 2.0 });
    assert!(r.converged(), "{:?}", r.status);
    for e in 0..lay.n_p {
        for (a, b) in lay.inputs(&r.x, e).iter().zip(c.u_prev.q_g) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn drto_collocation_matches_simulation() {
    let c = drto_case([2.0, 2.5, 3.0]);
    let (r, lay) = drto_solve(&c, &CollocationGrid::default(), &DrtoSettings::default());
    assert!(r.converged(), "{:?}", r.status);
    let mut s = c.x_hat;
    for e in 0..lay.n_p {
        let u = ControlInputs { q_g: lay.inputs(&r.x, e) };
        assert!(SsEconConstraints::default().is_feasible(&u.q_g, 1e-8));
        s = crate::integrate::rk4_span(&c.rig, &s, &c.rig.gas_mass_flows(&u), &c.dist, &c.theta, 10.0, 0.05).unwrap();
        let coll = lay.state(&r.x, e, 2);
        for i in 0..3 {
            assert!((s.m_g[i] - coll.m_g[i]).abs() < 0.01 * 3e-4);
            assert!((s.m_l[i] - coll.m_l[i]).abs() < 0.01 * 1.0);
        }
    }
}

#[test]
fn drto_at_steady_optimum_keeps_it() {
    let base = drto_case([2.5; 3]);
    let (_, ss) = econ(&base.rig, &base.theta, &base.dist, &EconWeights::default());
    let c = DrtoCase { x_hat: ss.state, u_prev: ControlInputs { q_g: ss.q_g }, ..base };
    let (r, lay) = drto_solve(&c, &CollocationGrid::default(), &DrtoSettings::default());
    assert!(r.converged(), "{:?}", r.status);
    let first = lay.inputs(&r.x, 0);
    for k in 0..3 {
        assert!((first[k] - ss.q_g[k]).abs() < 1e-4, "{first:?} vs {:?}", ss.q_g);
    }
}

#[test]
fn drto_turnpike_towards_steady_optimum() {
    // Without a terminal cost the last elements trade holdup for profit;
    // the middle of a long horizon sits on the steady optimum.
    let c = drto_case([2.5; 3]);
    let (_, ss) = econ(&c.rig, &c.theta, &c.dist, &EconWeights::default());
    let (r, lay) = drto_solve(&c, &CollocationGrid { n_p: 12, t_p: 10.0 }, &DrtoSettings::default());
    assert!(r.converged(), "{:?}", r.status);
    let first_gap: f64 = (0..3).map(|k| (c.u_prev.q_g[k] - ss.q_g[k]).abs()).fold(0.0, f64::max);
    for e in 3..lay.n_p - 3 {
        let u = lay.inputs(&r.x, e);
        let gap: f64 = (0..3).map(|k| (u[k] - ss.q_g[k]).abs()).fold(0.0, f64::max);
        assert!(gap < 0.01 * first_gap, "element {e}: {u:?} vs {:?}", ss.q_g);
    }
}


