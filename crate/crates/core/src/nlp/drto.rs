use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ss_econ::{state_bounds, EconWeights, SsEconConstraints, J_SCALE, MG_SCALE, ML_SCALE, P_SCALE};
use super::{Evaluation, NLProblem, NlpError, NlpFunctions};
use crate::integrate::rk4_span;
use crate::model::dual::var;
use crate::model::{ControlInputs, DisturbanceState, NetworkState, OutletSplit, Rig, ThetaVector, WellInputs};

const S6: f64 = 2.449_489_742_783_178;

/// Radau IIA abscissae (3 stages, order 5).
pub const RADAU_C: [f64; 3] = [(4.0 - S6) / 10.0, (4.0 + S6) / 10.0, 1.0];

/// Radau IIA coefficient matrix. The last row holds the quadrature weights,
/// which is what makes the scheme stiffly accurate.
pub const RADAU_A: [[f64; 3]; 3] = [
    [(88.0 - 7.0 * S6) / 360.0, (296.0 - 169.0 * S6) / 1800.0, (-2.0 + 3.0 * S6) / 225.0],
    [(296.0 + 169.0 * S6) / 1800.0, (88.0 + 7.0 * S6) / 360.0, (-2.0 - 3.0 * S6) / 225.0],
    [(16.0 - S6) / 36.0, (16.0 + S6) / 36.0, 1.0 / 9.0],
];

/// Finite-element grid of the dynamic problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationGrid {
    /// Number of elements (prediction horizon in elements).
    pub n_p: usize,
    /// Element length, s.
    pub t_p: f64,
}

impl Default for CollocationGrid {
    fn default() -> Self {
        Self { n_p: 6, t_p: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrtoSettings {
    /// Input-move weight R (scalar times identity).
    pub r_weight: f64,
    /// Largest input change between consecutive elements, sL/min.
    pub du_max: f64,
}

impl Default for DrtoSettings {
    fn default() -> Self {
        Self { r_weight: 0.01, du_max: 2.0 }
    }
}

const NX: usize = 6;
const NU: usize = 3;
const NS: usize = 3;
/// Variables per element: inputs followed by the states at the three
/// collocation points.
const PER_ELEMENT: usize = NU + NS * NX;
/// Inequalities per element: availability, 2×3 move limits and two guards
/// per well at each collocation point.
const INEQ_PER_ELEMENT: usize = 1 + 2 * NU + 2 * 3 * NS;

fn x_scale(k: usize) -> f64 {
    if k < 3 {
        MG_SCALE
    } else {
        ML_SCALE
    }
}

/// Index bookkeeping of the dynamic problem's variable vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrtoLayout {
    pub n_p: usize,
}

impl DrtoLayout {
    pub fn n_vars(&self) -> usize {
        self.n_p * PER_ELEMENT
    }

    pub fn u_index(&self, e: usize) -> usize {
        e * PER_ELEMENT
    }

    /// Offset of the 6 scaled states at collocation point `j` of element `e`.
    pub fn x_index(&self, e: usize, j: usize) -> usize {
        e * PER_ELEMENT + NU + j * NX
    }

    pub fn inputs(&self, x: &DVector<f64>, e: usize) -> [f64; 3] {
        let o = self.u_index(e);
        [x[o], x[o + 1], x[o + 2]]
    }

    pub fn state(&self, x: &DVector<f64>, e: usize, j: usize) -> NetworkState {
        let o = self.x_index(e, j);
        NetworkState::from_slice(&std::array::from_fn::<f64, 6, _>(|k| x[o + k] * x_scale(k)))
    }

    /// Warm start for the next receding-horizon solve: drop the first
    /// element and repeat the last one.
    pub fn shift(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        let n = self.n_vars();
        out.rows_mut(0, n - PER_ELEMENT).copy_from(&x.rows(PER_ELEMENT, n - PER_ELEMENT));
        out
    }
}

struct Drto {
    rig: Rig,
    theta: ThetaVector,
    dist: DisturbanceState,
    x_hat: [f64; 6],
    u_prev: [f64; 3],
    grid: CollocationGrid,
    settings: DrtoSettings,
    weights: EconWeights,
    cons: SsEconConstraints,
    layout: DrtoLayout,
}

impl NlpFunctions for Drto {
    fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }
    fn n_eq(&self) -> usize {
        self.grid.n_p * NS * NX
    }
    fn n_ineq(&self) -> usize {
        self.grid.n_p * INEQ_PER_ELEMENT
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, NlpError> {
        let rig = &self.rig;
        let lay = &self.layout;
        let (n, neq, nin) = (self.n_vars(), self.n_eq(), self.n_ineq());
        let h = self.grid.t_p;
        let horizon = h * self.grid.n_p as f64;
        let dw_dq = rig.slpm_to_kgps(1.0);
        let to_lpm = rig.liquid_kgps_to_lpm(1.0);
        // Objective is the negated time-averaged profit plus the move penalty,
        // both divided by J_SCALE; the scaling does not move the optimum.
        let obj_scale = 1.0 / (J_SCALE * horizon);
        let mut ev = Evaluation {
            f: 0.0,
            grad: DVector::zeros(n),
            c_eq: DVector::zeros(neq),
            j_eq: DMatrix::zeros(neq, n),
            c_in: DVector::zeros(nin),
            j_in: DMatrix::zeros(nin, n),
        };

        for e in 0..self.grid.n_p {
            let ou = lay.u_index(e);
            let u = lay.inputs(x, e);
            // Move penalty and limits, Δu_e = u_e − u_{e−1}
            let prev = if e == 0 { self.u_prev } else { lay.inputs(x, e - 1) };
            let row0 = e * INEQ_PER_ELEMENT;
            ev.c_in[row0] = self.cons.q_total_max - u.iter().sum::<f64>();
            for k in 0..NU {
                ev.j_in[(row0, ou + k)] = -1.0;
                let du = u[k] - prev[k];
                let pen = self.settings.r_weight / h * obj_scale;
                ev.f += pen * du * du;
                ev.grad[ou + k] += 2.0 * pen * du;
                if e > 0 {
                    ev.grad[lay.u_index(e - 1) + k] -= 2.0 * pen * du;
                }
                let (rp, rm) = (row0 + 1 + 2 * k, row0 + 2 + 2 * k);
                ev.c_in[rp] = self.settings.du_max - du;
                ev.c_in[rm] = self.settings.du_max + du;
                ev.j_in[(rp, ou + k)] = -1.0;
                ev.j_in[(rm, ou + k)] = 1.0;
                if e > 0 {
                    ev.j_in[(rp, lay.u_index(e - 1) + k)] = 1.0;
                    ev.j_in[(rm, lay.u_index(e - 1) + k)] = -1.0;
                }
            }

            // Element start: measured state for the first element, end of
            // the previous element otherwise (continuity).
            let start: [f64; 6] = if e == 0 {
                std::array::from_fn(|k| self.x_hat[k] / x_scale(k))
            } else {
                let o = lay.x_index(e - 1, NS - 1);
                std::array::from_fn(|k| x[o + k])
            };

            // f and df/d(x_scaled, u) at each collocation point
            let mut fvals = [[0.0; NX]; NS];
            let mut dfdx = [[[0.0; NX]; NX]; NS];
            let mut dfdu = [[[0.0; NU]; NX]; NS];
            for j in 0..NS {
                let ox = lay.x_index(e, j);
                for i in 0..3 {
                    let wi = WellInputs {
                        m_g: x[ox + i] * MG_SCALE,
                        m_l: x[ox + 3 + i] * ML_SCALE,
                        w_g: u[i] * dw_dq,
                        v_o: self.dist.v_o[i],
                        p_pump: self.dist.p_pump,
                        theta_res: self.theta.res[i],
                        theta_top: self.theta.top[i],
                        split: OutletSplit::Holdup,
                    };
                    let we = rig.well_eval(&wi, i)?;
                    let (g, l) = (i, 3 + i);
                    for (row, d) in [(g, &we.dm_g), (l, &we.dm_l)] {
                        fvals[j][row] = d.v;
                        dfdx[j][row][g] = d.d[var::M_G] * MG_SCALE;
                        dfdx[j][row][l] = d.d[var::M_L] * ML_SCALE;
                        dfdu[j][row][i] = d.d[var::W_G] * dw_dq;
                    }
                    let cols = |d: &crate::model::dual::Dual| {
                        [(ox + g, d.d[var::M_G] * MG_SCALE), (ox + l, d.d[var::M_L] * ML_SCALE), (ou + i, d.d[var::W_G] * dw_dq)]
                    };
                    // Guards
                    let rb = row0 + 1 + 2 * NU + 2 * (3 * j + i);
                    ev.c_in[rb] = (self.dist.p_pump - we.p_bi.v - self.cons.guard) / P_SCALE;
                    for (c, v) in cols(&we.p_bi) {
                        ev.j_in[(rb, c)] = -v / P_SCALE;
                    }
                    ev.c_in[rb + 1] = (we.p_rh.v - rig.consts.p_atm - self.cons.guard) / P_SCALE;
                    for (c, v) in cols(&we.p_rh) {
                        ev.j_in[(rb + 1, c)] = v / P_SCALE;
                    }
                    // Quadrature of the profit with the Radau weights
                    let wq = h * RADAU_A[NS - 1][j] * self.weights.price[i] * to_lpm * obj_scale;
                    ev.f -= wq * we.w_l.v;
                    for (c, v) in cols(&we.w_l) {
                        ev.grad[c] -= wq * v;
                    }
                }
            }

            // Collocation residuals in scaled state units:
            // X_j − X_start − h Σ_k A_jk f(X_k, u) / scale
            for j in 0..NS {
                let ox = lay.x_index(e, j);
                for r in 0..NX {
                    let row = (e * NS + j) * NX + r;
                    let sc = x_scale(r);
                    let quad: f64 = (0..NS).map(|k| RADAU_A[j][k] * fvals[k][r]).sum();
                    ev.c_eq[row] = x[ox + r] - start[r] - h * quad / sc;
                    ev.j_eq[(row, ox + r)] += 1.0;
                    if e > 0 {
                        ev.j_eq[(row, lay.x_index(e - 1, NS - 1) + r)] -= 1.0;
                    }
                    for k in 0..NS {
                        let a = h * RADAU_A[j][k] / sc;
                        let oxk = lay.x_index(e, k);
                        for c in 0..NX {
                            ev.j_eq[(row, oxk + c)] -= a * dfdx[k][r][c];
                        }
                        for c in 0..NU {
                            ev.j_eq[(row, ou + c)] -= a * dfdu[k][r][c];
                        }
                    }
                }
            }
        }
        Ok(ev)
    }
}

/// Builds the dynamic economic problem over `grid.n_p` elements with
/// piecewise-constant inputs and Radau IIA collocation of the holdup
/// dynamics, starting from the estimated state `x_hat`.
///
/// Objective: −(time-averaged profit) + Σ_e Δu_eᵀ R Δu_e / T_p, where
/// Δu_0 = u_0 − u_prev. The move term is a penalty.
///
/// Without a warm start the initial guess is an RK4 simulation from
/// `x_hat` holding `u_prev`.
#[allow(clippy::too_many_arguments)]
pub fn build_drto(
    rig: &Rig,
    theta_hat: &ThetaVector,
    x_hat: &NetworkState,
    u_prev: &ControlInputs,
    dist: &DisturbanceState,
    grid: &CollocationGrid,
    settings: &DrtoSettings,
    weights: &EconWeights,
    cons: &SsEconConstraints,
    warm: Option<&DVector<f64>>,
) -> Result<(NLProblem, DrtoLayout), NlpError> {
    if grid.n_p == 0 || !(grid.t_p > 0.0) {
        return Err(NlpError::Dimension("collocation grid must have at least one element of positive length".into()));
    }
    let layout = DrtoLayout { n_p: grid.n_p };
    let n = layout.n_vars();
    let ((gl, ll), (gu, lu)) = state_bounds(rig);
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    for e in 0..grid.n_p {
        for k in 0..NU {
            lower[layout.u_index(e) + k] = cons.q_min;
            upper[layout.u_index(e) + k] = cons.q_max;
        }
        for j in 0..NS {
            let o = layout.x_index(e, j);
            for k in 0..NX {
                lower[o + k] = if k < 3 { gl } else { ll };
                upper[o + k] = if k < 3 { gu } else { lu };
            }
        }
    }
    let u0 = cons.project(u_prev.q_g);
    let x0 = match warm {
        Some(w) if w.len() == n => w.clone(),
        _ => {
            let mut x0 = DVector::zeros(n);
            let w_g = rig.gas_mass_flows(&ControlInputs { q_g: u0 });
            let mut s = *x_hat;
            let mut t_prev = 0.0;
            for e in 0..grid.n_p {
                x0.rows_mut(layout.u_index(e), NU).copy_from_slice(&u0);
                for j in 0..NS {
                    let t = grid.t_p * (e as f64 + RADAU_C[j]);
                    if let Ok(next) = rk4_span(rig, &s, &w_g, dist, theta_hat, t - t_prev, 0.05) {
                        s = next;
                    }
                    t_prev = t;
                    let arr = s.to_array();
                    for k in 0..NX {
                        x0[layout.x_index(e, j) + k] = arr[k] / x_scale(k);
                    }
                }
            }
            x0
        }
    };
    let f = Drto {
        rig: rig.clone(),
        theta: *theta_hat,
        dist: *dist,
        x_hat: x_hat.to_array(),
        u_prev: u_prev.q_g,
        grid: *grid,
        settings: *settings,
        weights: *weights,
        cons: *cons,
        layout,
    };
    Ok((NLProblem::new(Box::new(f), lower, upper, x0), layout))
}
