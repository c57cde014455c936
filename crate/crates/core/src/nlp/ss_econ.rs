use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{NLProblem, NlpError, NlpFunctions, Evaluation};
use crate::model::dual::var;
use crate::model::{
    ControlInputs, DisturbanceState, NetworkState, OutletSplit, Rig, ThetaVector, WellInputs, N_WELLS,
};

/// Scale of the gas holdup variables, kg.
pub(crate) const MG_SCALE: f64 = 3.0e-4;
/// Scale of the liquid holdup variables, kg.
pub(crate) const ML_SCALE: f64 = 1.0;
/// Scale of gas balance residuals, kg/s (about 2.5 sL/min).
pub(crate) const WG_SCALE: f64 = 5.0e-5;
/// Scale of liquid balance residuals, kg/s.
pub(crate) const WL_SCALE: f64 = 1.0e-2;
/// Scale of the pressure guards, Pa.
pub(crate) const P_SCALE: f64 = 1.0e4;
/// Scale of the economic objective.
pub(crate) const J_SCALE: f64 = 100.0;

/// Price of each well's liquid in the profit function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconWeights {
    pub price: [f64; 3],
}

impl Default for EconWeights {
    fn default() -> Self {
        Self { price: [20.0, 10.0, 30.0] }
    }
}

impl EconWeights {
    /// Profit J = Σ price_i Q_l,i with Q_l in L/min.
    pub fn profit(&self, q_l: &[f64; 3]) -> f64 {
        self.price.iter().zip(q_l).map(|(p, q)| p * q).sum()
    }
}

/// Operating limits on the gas-lift setpoints and the pressure guards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsEconConstraints {
    pub q_min: f64,
    pub q_max: f64,
    /// Gas availability, sL/min.
    pub q_total_max: f64,
    /// Margin ε in P_pump − P_bi ≥ ε and P_rh − P_atm ≥ ε, Pa.
    pub guard: f64,
}

impl Default for SsEconConstraints {
    fn default() -> Self {
        Self { q_min: 1.0, q_max: 5.0, q_total_max: 7.5, guard: 100.0 }
    }
}

impl SsEconConstraints {
    /// Projects a setpoint triple onto the box and the availability limit.
    /// Out-of-box components are clipped first; an excess over the
    /// availability limit is then removed in proportion to each
    /// component's room above the lower bound.
    pub fn project(&self, q: [f64; 3]) -> [f64; 3] {
        let mut out = q.map(|v| v.clamp(self.q_min, self.q_max));
        let total: f64 = out.iter().sum();
        if total > self.q_total_max {
            let excess = total - self.q_total_max;
            let room: f64 = out.iter().map(|v| v - self.q_min).sum();
            if room > 0.0 {
                for v in &mut out {
                    *v -= excess * (*v - self.q_min) / room;
                }
            }
            // Guard the last ulp against rounding above the limit.
            let total: f64 = out.iter().sum();
            if total > self.q_total_max {
                let k = out.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k).unwrap_or(0);
                out[k] -= total - self.q_total_max;
            }
        }
        out
    }

    pub fn is_feasible(&self, q: &[f64; 3], tol: f64) -> bool {
        q.iter().all(|v| *v >= self.q_min - tol && *v <= self.q_max + tol) && q.iter().sum::<f64>() <= self.q_total_max + tol
    }
}

/// Scaled box for the holdup variables: ((m_g lo, m_l lo), (m_g hi, m_l hi)).
pub(crate) fn state_bounds(rig: &Rig) -> ((f64, f64), (f64, f64)) {
    let lo = (1.0e-6 / MG_SCALE, 0.05 / ML_SCALE);
    let hi = (2.0e-3 / MG_SCALE, rig.consts.rho_l * rig.v_total() * (1.0 - 1e-4) / ML_SCALE);
    (lo, hi)
}

struct SsEcon {
    rig: Rig,
    theta: ThetaVector,
    dist: DisturbanceState,
    weights: EconWeights,
    cons: SsEconConstraints,
}

// Variable layout: [Q_g(3) sL/min, m_g(3)/MG_SCALE, m_l(3)/ML_SCALE]
impl NlpFunctions for SsEcon {
    fn n_vars(&self) -> usize {
        9
    }
    fn n_eq(&self) -> usize {
        6
    }
    fn n_ineq(&self) -> usize {
        7
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, NlpError> {
        let rig = &self.rig;
        let dw_dq = rig.slpm_to_kgps(1.0);
        let to_lpm = rig.liquid_kgps_to_lpm(1.0);
        let mut ev = Evaluation {
            f: 0.0,
            grad: DVector::zeros(9),
            c_eq: DVector::zeros(6),
            j_eq: DMatrix::zeros(6, 9),
            c_in: DVector::zeros(7),
            j_in: DMatrix::zeros(7, 9),
        };
        ev.c_in[0] = self.cons.q_total_max - (x[0] + x[1] + x[2]);
        for k in 0..3 {
            ev.j_in[(0, k)] = -1.0;
        }
        for i in 0..N_WELLS {
            let (iq, ig, il) = (i, 3 + i, 6 + i);
            let wi = WellInputs {
                m_g: x[ig] * MG_SCALE,
                m_l: x[il] * ML_SCALE,
                w_g: x[iq] * dw_dq,
                v_o: self.dist.v_o[i],
                p_pump: self.dist.p_pump,
                theta_res: self.theta.res[i],
                theta_top: self.theta.top[i],
                split: OutletSplit::Holdup,
            };
            let e = rig.well_eval(&wi, i)?;
            // d/d(Q, x_g, x_l) of a dual quantity
            let cols = |d: &crate::model::dual::Dual| {
                [d.d[var::W_G] * dw_dq, d.d[var::M_G] * MG_SCALE, d.d[var::M_L] * ML_SCALE]
            };
            let idx = [iq, ig, il];

            ev.c_eq[i] = e.dm_g.v / WG_SCALE;
            ev.c_eq[3 + i] = e.dm_l.v / WL_SCALE;
            for (k, v) in idx.iter().zip(cols(&e.dm_g)) {
                ev.j_eq[(i, *k)] = v / WG_SCALE;
            }
            for (k, v) in idx.iter().zip(cols(&e.dm_l)) {
                ev.j_eq[(3 + i, *k)] = v / WL_SCALE;
            }

            ev.c_in[1 + i] = (self.dist.p_pump - e.p_bi.v - self.cons.guard) / P_SCALE;
            for (k, v) in idx.iter().zip(cols(&e.p_bi)) {
                ev.j_in[(1 + i, *k)] = -v / P_SCALE;
            }
            ev.c_in[4 + i] = (e.p_rh.v - rig.consts.p_atm - self.cons.guard) / P_SCALE;
            for (k, v) in idx.iter().zip(cols(&e.p_rh)) {
                ev.j_in[(4 + i, *k)] = v / P_SCALE;
            }

            let price = self.weights.price[i] * to_lpm / J_SCALE;
            ev.f -= price * e.w_l.v;
            for (k, v) in idx.iter().zip(cols(&e.w_l)) {
                ev.grad[*k] -= price * v;
            }
        }
        Ok(ev)
    }
}

/// Decoded steady-state economic optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsEconSolution {
    pub q_g: [f64; 3],
    pub state: NetworkState,
    /// Profit at the solution, Σ price_i Q_l,i.
    pub profit: f64,
}

impl SsEconSolution {
    pub fn decode(x: &DVector<f64>, objective: f64) -> Self {
        let state = NetworkState {
            m_g: std::array::from_fn(|i| x[3 + i] * MG_SCALE),
            m_l: std::array::from_fn(|i| x[6 + i] * ML_SCALE),
        };
        Self { q_g: [x[0], x[1], x[2]], state, profit: -objective * J_SCALE }
    }
}

/// Builds the steady-state economic optimization: maximize Σ price_i Q_l,i
/// over gas-lift setpoints and per-well steady holdups, subject to the
/// steady balances, the setpoint box, gas availability and the pressure
/// guards.
///
/// `u0` and `guess` seed the starting point; the holdups are refreshed
/// with a steady-state solve at `u0` when that succeeds.
pub fn build_ss_econ(
    rig: &Rig,
    theta_hat: &ThetaVector,
    dist: &DisturbanceState,
    weights: &EconWeights,
    cons: &SsEconConstraints,
    u0: &ControlInputs,
    guess: &NetworkState,
) -> NLProblem {
    let u0 = cons.project(u0.q_g);
    let state = rig
        .steady_state_solve(&ControlInputs { q_g: u0 }, dist, theta_hat, guess)
        .unwrap_or(*guess);
    let ((gl, ll), (gu, lu)) = state_bounds(rig);
    let lower = DVector::from_fn(9, |k, _| match k {
        0..=2 => cons.q_min,
        3..=5 => gl,
        _ => ll,
    });
    let upper = DVector::from_fn(9, |k, _| match k {
        0..=2 => cons.q_max,
        3..=5 => gu,
        _ => lu,
    });
    let x0 = DVector::from_fn(9, |k, _| match k {
        0..=2 => u0[k],
        3..=5 => state.m_g[k - 3] / MG_SCALE,
        _ => state.m_l[k - 6] / ML_SCALE,
    });
    let f = SsEcon { rig: rig.clone(), theta: *theta_hat, dist: *dist, weights: *weights, cons: *cons };
    NLProblem::new(Box::new(f), lower, upper, x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleResult {
    pub q_g: [f64; 3],
    pub profit: f64,
    /// Grid triples evaluated.
    pub evaluated: usize,
    /// Grid triples skipped because a well could not be solved.
    pub failed: usize,
}

/// Exhaustive search over setpoint triples on a regular grid inside the
/// box with Σ Q_g ≤ availability. Since the wells are independent, each
/// well's steady liquid rate is solved once per grid value and reused.
pub fn brute_force_ss_oracle(
    rig: &Rig,
    theta: &ThetaVector,
    dist: &DisturbanceState,
    weights: &EconWeights,
    cons: &SsEconConstraints,
    grid_step: f64,
) -> OracleResult {
    let n = ((cons.q_max - cons.q_min) / grid_step).round() as usize;
    let values: Vec<f64> = (0..=n).map(|k| cons.q_min + k as f64 * grid_step).collect();
    let nominal = NetworkState::nominal();
    // q_l[i][k]: liquid rate of well i at grid value k, None when unsolvable
    let q_l: Vec<Vec<Option<f64>>> = (0..N_WELLS)
        .map(|i| {
            let mut guess = nominal;
            values
                .iter()
                .map(|&q| {
                    let inputs = ControlInputs::uniform(q);
                    let w_g = rig.gas_mass_flows(&inputs);
                    let wi = rig.well_inputs(&guess, &w_g, dist, theta, i);
                    let (m_g, m_l) = rig.solve_well_steady(&wi, i, &Default::default()).ok()?;
                    guess.set_well(i, m_g, m_l);
                    let a = rig.well_algebraics(&WellInputs { m_g, m_l, ..wi }, i).ok()?;
                    let guard_ok = dist.p_pump - a.p_bi >= cons.guard && a.p_rh - rig.consts.p_atm >= cons.guard;
                    guard_ok.then(|| rig.liquid_kgps_to_lpm(a.w_l))
                })
                .collect()
        })
        .collect();

    let mut best = OracleResult { q_g: [f64::NAN; 3], profit: f64::NEG_INFINITY, evaluated: 0, failed: 0 };
    let cap = cons.q_total_max + 1e-9;
    for (a, qa) in values.iter().enumerate() {
        for (b, qb) in values.iter().enumerate() {
            if qa + qb + cons.q_min > cap {
                break;
            }
            for (c, qc) in values.iter().enumerate() {
                if qa + qb + qc > cap {
                    break;
                }
                best.evaluated += 1;
                match (q_l[0][a], q_l[1][b], q_l[2][c]) {
                    (Some(l1), Some(l2), Some(l3)) => {
                        let j = weights.profit(&[l1, l2, l3]);
                        if j > best.profit {
                            best.profit = j;
                            best.q_g = [*qa, *qb, *qc];
                        }
                    }
                    _ => best.failed += 1,
                }
            }
        }
    }
    best
}
