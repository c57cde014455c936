use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ss_econ::{state_bounds, MG_SCALE, ML_SCALE, WG_SCALE, WL_SCALE};
use super::{Evaluation, NLProblem, NlpError, NlpFunctions};
use crate::model::dual::{var, Dual};
use crate::model::{
    ControlInputs, DisturbanceState, ModelOutputs, NetworkState, OutletSplit, Rig, ThetaVector, WellInputs,
    DEFAULT_THETA_RES, DEFAULT_THETA_TOP, N_WELLS,
};

/// Which six parameters the steady-state fit adapts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParameterSet {
    /// Reservoir and top valve coefficients.
    ThetaTop,
    /// Reservoir valve coefficients and the outlet liquid fraction of each
    /// well; the top valves stay at their given values.
    AlphaL,
}

/// Scale of the outlet gas fraction 1 − α_l used as the fit variable.
const GAS_FRACTION_SCALE: f64 = 3.0e-4;
/// Fitted pressures are compared in kPa gauge, liquid rates in L/min.
const KPA: f64 = 1.0e3;

/// Parameter scaling and decoding for a steady-state fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsFitLayout {
    pub set: FitParameterSet,
}

impl SsFitLayout {
    /// Physical parameter -> scaled variable.
    fn scale(&self, k: usize, p: f64) -> f64 {
        match (self.set, k) {
            (_, 0..=2) => p / DEFAULT_THETA_RES,
            (FitParameterSet::ThetaTop, _) => p / DEFAULT_THETA_TOP,
            (FitParameterSet::AlphaL, _) => (1.0 - p) / GAS_FRACTION_SCALE,
        }
    }

    fn unscale(&self, k: usize, v: f64) -> f64 {
        match (self.set, k) {
            (_, 0..=2) => v * DEFAULT_THETA_RES,
            (FitParameterSet::ThetaTop, _) => v * DEFAULT_THETA_TOP,
            (FitParameterSet::AlphaL, _) => 1.0 - v * GAS_FRACTION_SCALE,
        }
    }

    /// d(physical)/d(scaled)
    fn dscale(&self, k: usize) -> f64 {
        match (self.set, k) {
            (_, 0..=2) => DEFAULT_THETA_RES,
            (FitParameterSet::ThetaTop, _) => DEFAULT_THETA_TOP,
            (FitParameterSet::AlphaL, _) => -GAS_FRACTION_SCALE,
        }
    }

    pub fn decode(&self, x: &DVector<f64>, objective: f64, theta_fixed: &ThetaVector) -> SsFitSolution {
        let params: [f64; 6] = std::array::from_fn(|k| self.unscale(k, x[k]));
        let state = NetworkState {
            m_g: std::array::from_fn(|i| x[6 + i] * MG_SCALE),
            m_l: std::array::from_fn(|i| x[9 + i] * ML_SCALE),
        };
        let (theta, alpha) = match self.set {
            FitParameterSet::ThetaTop => (ThetaVector::from_slice(&params), None),
            FitParameterSet::AlphaL => (
                ThetaVector { res: [params[0], params[1], params[2]], top: theta_fixed.top },
                Some([params[3], params[4], params[5]]),
            ),
        };
        SsFitSolution { params, theta, alpha, state, objective }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsFitSolution {
    /// Adapted parameters in physical units, in the order of the set.
    pub params: [f64; 6],
    pub theta: ThetaVector,
    pub alpha: Option<[f64; 3]>,
    pub state: NetworkState,
    /// Weighted squared residual (y_p − y)ᵀ V (y_p − y).
    pub objective: f64,
}

struct SsFit {
    rig: Rig,
    layout: SsFitLayout,
    /// Measured [P_rh kPa gauge ×3, Q_l L/min ×3].
    y_meas: [f64; 6],
    weights: DMatrix<f64>,
    w_g: [f64; 3],
    dist: DisturbanceState,
    theta_fixed: ThetaVector,
}

// Variable layout: [params(6) scaled, m_g(3)/MG_SCALE, m_l(3)/ML_SCALE]
impl NlpFunctions for SsFit {
    fn n_vars(&self) -> usize {
        12
    }
    fn n_eq(&self) -> usize {
        6
    }
    fn n_ineq(&self) -> usize {
        0
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, NlpError> {
        let rig = &self.rig;
        let to_lpm = rig.liquid_kgps_to_lpm(1.0);
        let mut c_eq = DVector::zeros(6);
        let mut j_eq = DMatrix::zeros(6, 12);
        // residuals r = y_meas - y_model and dr/dx
        let mut r = DVector::zeros(6);
        let mut dr = DMatrix::zeros(6, 12);
        for i in 0..N_WELLS {
            let p1 = self.layout.unscale(i, x[i]);
            let p2 = self.layout.unscale(3 + i, x[3 + i]);
            let (theta_top, split, second) = match self.layout.set {
                FitParameterSet::ThetaTop => (p2, OutletSplit::Holdup, var::THETA_TOP),
                FitParameterSet::AlphaL => (self.theta_fixed.top[i], OutletSplit::Fixed(p2), var::ALPHA),
            };
            let wi = WellInputs {
                m_g: x[6 + i] * MG_SCALE,
                m_l: x[9 + i] * ML_SCALE,
                w_g: self.w_g[i],
                v_o: self.dist.v_o[i],
                p_pump: self.dist.p_pump,
                theta_res: p1,
                theta_top,
                split,
            };
            let e = rig.well_eval(&wi, i)?;
            let idx = [i, 3 + i, 6 + i, 9 + i];
            let cols = |d: &Dual| {
                [
                    d.d[var::THETA_RES] * self.layout.dscale(i),
                    d.d[second] * self.layout.dscale(3 + i),
                    d.d[var::M_G] * MG_SCALE,
                    d.d[var::M_L] * ML_SCALE,
                ]
            };
            c_eq[i] = e.dm_g.v / WG_SCALE;
            c_eq[3 + i] = e.dm_l.v / WL_SCALE;
            for (k, v) in idx.iter().zip(cols(&e.dm_g)) {
                j_eq[(i, *k)] = v / WG_SCALE;
            }
            for (k, v) in idx.iter().zip(cols(&e.dm_l)) {
                j_eq[(3 + i, *k)] = v / WL_SCALE;
            }
            r[i] = self.y_meas[i] - (e.p_rh.v - rig.consts.p_atm) / KPA;
            for (k, v) in idx.iter().zip(cols(&e.p_rh)) {
                dr[(i, *k)] = -v / KPA;
            }
            r[3 + i] = self.y_meas[3 + i] - e.w_l.v * to_lpm;
            for (k, v) in idx.iter().zip(cols(&e.w_l)) {
                dr[(3 + i, *k)] = -v * to_lpm;
            }
        }
        let vr = &self.weights * &r;
        let f = r.dot(&vr);
        // d(rᵀVr) = rᵀ(V + Vᵀ) dr
        let sym = &self.weights + self.weights.transpose();
        let grad = dr.tr_mul(&(sym * &r));
        Ok(Evaluation { f, grad, c_eq, j_eq, c_in: DVector::zeros(0), j_in: DMatrix::zeros(0, 12) })
    }
}

/// Builds the steady-state adaptation problem: minimize the weighted
/// squared mismatch between averaged measurements and the steady model
/// outputs [P_rh ×3, Q_l ×3] over six parameters and the steady holdups.
///
/// Pressures enter the mismatch in kPa gauge and liquid rates in L/min.
/// Parameter bounds are given in physical units in the order of `set`.
#[allow(clippy::too_many_arguments)]
pub fn build_ss_fit(
    rig: &Rig,
    y_bar: &ModelOutputs,
    u_p: &ControlInputs,
    dist: &DisturbanceState,
    set: FitParameterSet,
    weights: &DMatrix<f64>,
    param_lower: [f64; 6],
    param_upper: [f64; 6],
    param_guess: [f64; 6],
    theta_fixed: &ThetaVector,
    state_guess: &NetworkState,
) -> Result<(NLProblem, SsFitLayout), NlpError> {
    if weights.shape() != (6, 6) {
        return Err(NlpError::Dimension(format!("weighting matrix is {:?}, expected 6x6", weights.shape())));
    }
    let layout = SsFitLayout { set };
    let y_meas: [f64; 6] = std::array::from_fn(|k| {
        if k < 3 {
            (y_bar.p_rh[k] - rig.consts.p_atm) / KPA
        } else {
            y_bar.q_l[k - 3]
        }
    });
    let w_g = rig.gas_mass_flows(u_p);
    // Scaled bounds; the gas-fraction map reverses the order for α_l.
    let mut lower = DVector::zeros(12);
    let mut upper = DVector::zeros(12);
    for k in 0..6 {
        let (a, b) = (layout.scale(k, param_lower[k]), layout.scale(k, param_upper[k]));
        lower[k] = a.min(b);
        upper[k] = a.max(b);
    }
    let ((gl, ll), (gu, lu)) = state_bounds(rig);
    for i in 0..3 {
        lower[6 + i] = gl;
        upper[6 + i] = gu;
        lower[9 + i] = ll;
        upper[9 + i] = lu;
    }
    // Start from the steady state of the guessed parameters when possible.
    let mut state = *state_guess;
    for i in 0..N_WELLS {
        let (theta_top, split) = match set {
            FitParameterSet::ThetaTop => (param_guess[3 + i], OutletSplit::Holdup),
            FitParameterSet::AlphaL => (theta_fixed.top[i], OutletSplit::Fixed(param_guess[3 + i])),
        };
        let wi = WellInputs {
            m_g: state_guess.m_g[i],
            m_l: state_guess.m_l[i],
            w_g: w_g[i],
            v_o: dist.v_o[i],
            p_pump: dist.p_pump,
            theta_res: param_guess[i],
            theta_top,
            split,
        };
        if let Ok((m_g, m_l)) = rig.solve_well_steady(&wi, i, &Default::default()) {
            state.set_well(i, m_g, m_l);
        }
    }
    let x0 = DVector::from_fn(12, |k, _| match k {
        0..=5 => layout.scale(k, param_guess[k]),
        6..=8 => state.m_g[k - 6] / MG_SCALE,
        _ => state.m_l[k - 9] / ML_SCALE,
    });
    let f = SsFit {
        rig: rig.clone(),
        layout,
        y_meas,
        weights: weights.clone(),
        w_g,
        dist: *dist,
        theta_fixed: *theta_fixed,
    };
    Ok((NLProblem::new(Box::new(f), lower, upper, x0), layout))
}
