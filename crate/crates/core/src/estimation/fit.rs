use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::EstimationError;
use crate::model::{ControlInputs, DisturbanceState, MeasurementVector, NetworkState, Rig, ThetaVector};
use crate::nlp::{build_ss_fit, solve, FitParameterSet, SolveStatus, SolverConfig, SsFitSolution};

/// Steady-state adaptation settings. Bounds are physical and follow the
/// parameter order of the chosen set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsFitConfig {
    pub set: FitParameterSet,
    /// Weighting of the residuals [P_rh kPa ×3, Q_l L/min ×3], row major.
    pub weights: [[f64; 6]; 6],
    pub theta_lower: [f64; 6],
    pub theta_upper: [f64; 6],
    /// Bounds on α_l for the [θ_res, α_l] set.
    pub alpha_lower: f64,
    pub alpha_upper: f64,
    /// A parameter within this fraction of its range from a bound is
    /// reported as active.
    pub bound_tol: f64,
    pub solver: SolverConfig,
}

impl Default for SsFitConfig {
    fn default() -> Self {
        let nom = ThetaVector::default().to_array();
        Self {
            set: FitParameterSet::ThetaTop,
            weights: std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 1.0 } else { 0.0 })),
            theta_lower: nom.map(|v| 0.5 * v),
            theta_upper: nom.map(|v| 2.0 * v),
            alpha_lower: 0.99,
            alpha_upper: 1.0 - 1e-5,
            bound_tol: 1e-6,
            solver: SolverConfig::default(),
        }
    }
}

impl SsFitConfig {
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(6, 6, |i, j| self.weights[i][j])
    }

    /// Bounds in the order of the fitted parameter set.
    pub fn param_bounds(&self) -> ([f64; 6], [f64; 6]) {
        match self.set {
            FitParameterSet::ThetaTop => (self.theta_lower, self.theta_upper),
            FitParameterSet::AlphaL => {
                let (l, u) = (self.theta_lower, self.theta_upper);
                let (al, au) = (self.alpha_lower, self.alpha_upper);
                ([l[0], l[1], l[2], al, al, al], [u[0], u[1], u[2], au, au, au])
            }
        }
    }

    pub fn validate(&self) -> Result<(), EstimationError> {
        let w = self.weight_matrix();
        if (&w - w.transpose()).amax() > 1e-12 {
            return Err(EstimationError::Config("fit weighting matrix is not symmetric".into()));
        }
        if w.symmetric_eigenvalues().min() < -1e-12 {
            return Err(EstimationError::Config("fit weighting matrix is not positive semidefinite".into()));
        }
        let (lo, hi) = self.param_bounds();
        if lo.iter().zip(&hi).any(|(l, u)| !(*l > 0.0 && l <= u)) {
            return Err(EstimationError::Config("fit bounds must satisfy 0 < lower <= upper".into()));
        }
        if !(self.alpha_upper < 1.0) {
            return Err(EstimationError::Config("alpha_upper must stay below 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsFitOutcome {
    pub solution: SsFitSolution,
    /// Parameter indices (order of the set) sitting on a bound.
    pub at_bounds: Vec<usize>,
    pub iterations: usize,
    pub stationarity: f64,
}

/// Fits the steady model to a window-averaged measurement. `theta_guess`
/// seeds θ_res and θ_top; with the α_l set its θ_top is held fixed.
pub fn ss_fit(
    rig: &Rig,
    y_bar: &MeasurementVector,
    u_p: &ControlInputs,
    dist: &DisturbanceState,
    cfg: &SsFitConfig,
    theta_guess: &ThetaVector,
    state_guess: &NetworkState,
) -> Result<SsFitOutcome, EstimationError> {
    cfg.validate()?;
    let (lo, hi) = cfg.param_bounds();
    let guess: [f64; 6] = match cfg.set {
        FitParameterSet::ThetaTop => theta_guess.to_array(),
        FitParameterSet::AlphaL => {
            // Outlet split of the guessed model at its steady state.
            let x = rig.steady_state_solve(u_p, dist, theta_guess, state_guess)?;
            let alg = rig.algebraics(&x, &rig.gas_mass_flows(u_p), dist, theta_guess)?;
            let r = theta_guess.res;
            [r[0], r[1], r[2], alg[0].alpha_l, alg[1].alpha_l, alg[2].alpha_l]
        }
    };
    let guess: [f64; 6] = std::array::from_fn(|k| guess[k].clamp(lo[k], hi[k]));
    let (problem, layout) = build_ss_fit(
        rig,
        y_bar,
        u_p,
        dist,
        cfg.set,
        &cfg.weight_matrix(),
        lo,
        hi,
        guess,
        theta_guess,
        state_guess,
    )?;
    let r = solve(&problem, &cfg.solver)?;
    if r.status != SolveStatus::Converged {
        return Err(EstimationError::NoConvergence { status: r.status, iterations: r.iterations });
    }
    let solution = layout.decode(&r.x, r.objective, theta_guess);
    let at_bounds: Vec<usize> = (0..6)
        .filter(|&k| {
            let tol = cfg.bound_tol * (hi[k] - lo[k]).max(f64::MIN_POSITIVE);
            solution.params[k] <= lo[k] + tol || solution.params[k] >= hi[k] - tol
        })
        .collect();
    if !at_bounds.is_empty() {
        log::warn!("steady-state fit: parameters {at_bounds:?} at their bounds");
    }
    Ok(SsFitOutcome { solution, at_bounds, iterations: r.iterations, stationarity: r.stationarity })
}
