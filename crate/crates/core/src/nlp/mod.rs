//! Dense SQP solver and the builders for the three optimization problems
//! used by the supervisors: steady-state economics, steady-state parameter
//! fitting and the collocation-based dynamic economic problem.

mod drto;
mod sqp;
mod ss_econ;
mod ss_fit;

pub use drto::{build_drto, CollocationGrid, DrtoLayout, DrtoSettings, RADAU_A, RADAU_C};
pub use sqp::solve;
pub use ss_econ::{
    brute_force_ss_oracle, build_ss_econ, EconWeights, OracleResult, SsEconConstraints, SsEconSolution,
};
pub use ss_fit::{build_ss_fit, FitParameterSet, SsFitLayout, SsFitSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NlpError {
    #[error("model evaluation failed: {0}")]
    Model(#[from] ModelError),
    #[error("problem dimensions are inconsistent: {0}")]
    Dimension(String),
    #[error("initial point cannot be evaluated: {0}")]
    InitialPoint(Box<NlpError>),
}

/// Values and first derivatives of an NLP at one point. Inequalities are
/// written as `c_in(x) >= 0`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub f: f64,
    pub grad: DVector<f64>,
    pub c_eq: DVector<f64>,
    pub j_eq: DMatrix<f64>,
    pub c_in: DVector<f64>,
    pub j_in: DMatrix<f64>,
}

/// Callback interface of a smooth NLP.
pub trait NlpFunctions: Send + Sync {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation, NlpError>;
}

/// An NLP together with its variable bounds and starting point.
pub struct NLProblem {
    pub functions: Box<dyn NlpFunctions>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub x0: DVector<f64>,
    /// Optional starting Hessian approximation (warm start).
    pub hessian0: Option<DMatrix<f64>>,
}

impl std::fmt::Debug for NLProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NLProblem")
            .field("n_vars", &self.functions.n_vars())
            .field("n_eq", &self.functions.n_eq())
            .field("n_ineq", &self.functions.n_ineq())
            .finish()
    }
}

impl NLProblem {
    pub fn new(functions: Box<dyn NlpFunctions>, lower: DVector<f64>, upper: DVector<f64>, x0: DVector<f64>) -> Self {
        Self { functions, lower, upper, x0, hessian0: None }
    }

    pub fn with_hessian(mut self, h: Option<DMatrix<f64>>) -> Self {
        self.hessian0 = h.filter(|h| h.nrows() == self.functions.n_vars() && h.ncols() == h.nrows());
        self
    }

    fn check(&self) -> Result<(), NlpError> {
        let n = self.functions.n_vars();
        if self.lower.len() != n || self.upper.len() != n || self.x0.len() != n {
            return Err(NlpError::Dimension(format!(
                "n = {n}, bounds {}/{}, x0 {}",
                self.lower.len(),
                self.upper.len(),
                self.x0.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| !(self.lower[i] <= self.upper[i])) {
            return Err(NlpError::Dimension(format!("bound {i}: lower > upper")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant of the merit line search.
    pub armijo: f64,
    pub backtrack: f64,
    pub min_step: f64,
    /// Powell damping threshold of the BFGS update.
    pub bfgs_damping: f64,
    /// Penalty on constraint violation in the elastic QP, relative to the
    /// merit penalty.
    pub elastic_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_iter: 300,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-10,
            bfgs_damping: 0.2,
            elastic_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
    InfeasibleQp,
}

#[derive(Debug, Clone)]
pub struct KKTResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub lambda_eq: DVector<f64>,
    pub mu_ineq: DVector<f64>,
    /// Multipliers of the lower and upper variable bounds.
    pub z_lower: DVector<f64>,
    pub z_upper: DVector<f64>,
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub wall_time: std::time::Duration,
    /// Final Hessian approximation, reusable as a warm start.
    pub hessian: DMatrix<f64>,
}

impl KKTResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Largest relative derivative error found by [`derivative_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub worst: f64,
    /// Which entry: "grad", "eq r" or "ineq r", and the variable index.
    pub row: String,
    pub var: usize,
}

/// Five-point finite-difference check of every derivative of `functions`
/// at `x`. Each entry is compared relative to the larger of itself, its
/// finite-difference estimate and 1e-6 of its row's largest entry.
pub fn derivative_check(functions: &dyn NlpFunctions, x: &DVector<f64>, h_rel: f64) -> Result<DerivativeReport, NlpError> {
    let base = functions.evaluate(x)?;
    let n = x.len();
    let mut report = DerivativeReport { worst: 0.0, row: String::new(), var: 0 };
    let rel = |a: f64, f: f64, scale: f64| {
        let d = f.abs().max(a.abs()).max(1e-6 * scale).max(1e-12);
        (a - f).abs() / d
    };
    let mut note = |err: f64, row: &dyn Fn() -> String, k: usize| {
        if err > report.worst {
            report = DerivativeReport { worst: err, row: row(), var: k };
        }
    };
    for k in 0..n {
        let h = h_rel * x[k].abs().max(1.0);
        let at = |s: f64| {
            let mut xp = x.clone();
            xp[k] += s;
            functions.evaluate(&xp)
        };
        let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        let five = |a: f64, b: f64, c: f64, d: f64| (8.0 * (a - b) - (c - d)) / (12.0 * h);
        let gscale = base.grad.amax();
        note(rel(base.grad[k], five(p1.f, m1.f, p2.f, m2.f), gscale), &|| "grad".into(), k);
        for r in 0..base.c_eq.len() {
            let scale = base.j_eq.row(r).amax();
            let fd = five(p1.c_eq[r], m1.c_eq[r], p2.c_eq[r], m2.c_eq[r]);
            note(rel(base.j_eq[(r, k)], fd, scale), &|| format!("eq {r}"), k);
        }
        for r in 0..base.c_in.len() {
            let scale = base.j_in.row(r).amax();
            let fd = five(p1.c_in[r], m1.c_in[r], p2.c_in[r], m2.c_in[r]);
            note(rel(base.j_in[(r, k)], fd, scale), &|| format!("ineq {r}"), k);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
