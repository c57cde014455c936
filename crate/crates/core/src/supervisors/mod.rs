//! Closed-loop decision policies: persistent parameter adaptation (ROPA),
//! steady-state RTO gated by the detector (SSRTO), dynamic RTO (DRTO) and
//! the fixed-input baseline.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::estimation::{ss_fit, Ekf, EkfConfig, ExtendedState, SsFitConfig};
use crate::model::{ControlInputs, DisturbanceState, NetworkState, Rig, ThetaVector};
use crate::nlp::{
    build_drto, build_ss_econ, solve, CollocationGrid, DrtoLayout, DrtoSettings, EconWeights, SolveStatus, SolverConfig,
    SsEconConstraints, SsEconSolution,
};
use crate::ssd::{SampleWindow, SsdConfig};
use crate::twin::{Supervisor, TwinSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum SupervisorKind {
    Ropa,
    Ssrto,
    Drto,
    Fixed,
}

impl SupervisorKind {
    pub const ALL: [SupervisorKind; 4] = [Self::Fixed, Self::Ropa, Self::Ssrto, Self::Drto];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ropa => "ropa",
            Self::Ssrto => "ssrto",
            Self::Drto => "drto",
            Self::Fixed => "fixed",
        }
    }
}

impl fmt::Display for SupervisorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SupervisorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ropa" => Ok(Self::Ropa),
            "ssrto" => Ok(Self::Ssrto),
            "drto" => Ok(Self::Drto),
            "fixed" => Ok(Self::Fixed),
            other => Err(format!("unknown supervisor '{other}' (expected ropa, ssrto, drto or fixed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisorConfig {
    pub kind: SupervisorKind,
    /// Execution period, s.
    pub period_s: f64,
    /// Input filter gain K_u (ROPA and SSRTO).
    pub k_u: f64,
    /// Setpoints of the fixed baseline, sL/min.
    pub fixed_u: [f64; 3],
    /// Whether the models see the current valve openings. When false they
    /// keep the openings of the first sample and the reservoir
    /// coefficients absorb the depletion.
    pub openings_known: bool,
    /// Initial parameter estimate.
    pub theta0: ThetaVector,
    pub ekf: EkfConfig,
    pub fit: SsFitConfig,
    pub ssd: SsdConfig,
    pub drto_grid: CollocationGrid,
    pub drto: DrtoSettings,
    pub econ: EconWeights,
    pub constraints: SsEconConstraints,
    pub solver: SolverConfig,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            kind: SupervisorKind::Ropa,
            period_s: 10.0,
            k_u: 0.4,
            fixed_u: [2.5; 3],
            openings_known: false,
            theta0: ThetaVector::default(),
            ekf: EkfConfig::default(),
            fit: SsFitConfig::default(),
            ssd: SsdConfig::default(),
            drto_grid: CollocationGrid::default(),
            drto: DrtoSettings::default(),
            econ: EconWeights::default(),
            constraints: SsEconConstraints::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl SupervisorConfig {
    pub fn validate(&self, sensor_period: f64) -> Result<(), String> {
        if !(self.k_u > 0.0 && self.k_u <= 1.0) {
            return Err(format!("k_u = {} must lie in (0, 1]", self.k_u));
        }
        let ratio = self.period_s / sensor_period;
        if !(self.period_s > 0.0) || (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(format!("period_s = {} is not a positive multiple of the sensor period {sensor_period}", self.period_s));
        }
        if !(self.ekf.dt - sensor_period).abs().lt(&1e-12) {
            return Err(format!("ekf.dt = {} must equal the sensor period {sensor_period}", self.ekf.dt));
        }
        let c = &self.constraints;
        if !(c.q_min <= c.q_max && 3.0 * c.q_min <= c.q_total_max) {
            return Err("constraints admit no setpoint triple".into());
        }
        if !c.is_feasible(&self.fixed_u, 1e-12) {
            return Err(format!("fixed_u {:?} violates the setpoint constraints", self.fixed_u));
        }
        if self.drto_grid.n_p == 0 || !(self.drto_grid.t_p > 0.0) || !(self.drto.du_max > 0.0) || !(self.drto.r_weight >= 0.0) {
            return Err("drto grid and settings must be positive".into());
        }
        self.ekf.validate().map_err(|e| e.to_string())?;
        self.fit.validate().map_err(|e| e.to_string())?;
        self.ssd.validate(sensor_period).map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// One supervisor execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorDecision {
    pub t: f64,
    pub kind: SupervisorKind,
    /// Raw optimizer output, sL/min.
    pub u_star: Option<[f64; 3]>,
    /// Setpoints sent to the flow loops, sL/min.
    pub u_applied: [f64; 3],
    pub acted: bool,
    /// Wall time of the model adaptation since the previous execution, ms.
    pub t_adapt_ms: f64,
    pub t_opt_ms: f64,
    /// End-to-end wall time of the execution, ms.
    pub t_total_ms: f64,
    /// Detector verdict (SSRTO), per channel and combined.
    pub ss_flags: Option<Vec<bool>>,
    pub steady: Option<bool>,
    pub theta_hat: ThetaVector,
    pub note: String,
}

/// u_prev + K_u (u★ − u_prev), then projected onto the setpoint limits.
pub fn filter_and_project(u_prev: &[f64; 3], u_star: &[f64; 3], k_u: f64, cons: &SsEconConstraints) -> [f64; 3] {
    let f: [f64; 3] = std::array::from_fn(|i| u_prev[i] + k_u * (u_star[i] - u_prev[i]));
    cons.project(f)
}

struct Plan {
    x: DVector<f64>,
    layout: DrtoLayout,
    hessian: DMatrix<f64>,
}

/// A supervisor driving the twin through [`crate::twin::run_scenario`].
pub struct RtoSupervisor {
    rig: Rig,
    cfg: SupervisorConfig,
    u_prev: [f64; 3],
    ekf: Option<Ekf>,
    window: SampleWindow,
    theta_hat: ThetaVector,
    steady_guess: NetworkState,
    plan: Option<Plan>,
    v_o_model: Option<[f64; 3]>,
    adapt_ms: f64,
    ekf_failures: usize,
    decisions: Vec<SupervisorDecision>,
}

impl RtoSupervisor {
    pub fn new(rig: Rig, cfg: SupervisorConfig, sensor_period: f64) -> Result<Self, String> {
        cfg.validate(sensor_period)?;
        let window = SampleWindow::new(cfg.ssd.window_len(sensor_period));
        Ok(Self {
            rig,
            theta_hat: cfg.theta0,
            u_prev: cfg.fixed_u,
            cfg,
            ekf: None,
            window,
            steady_guess: NetworkState::nominal(),
            plan: None,
            v_o_model: None,
            adapt_ms: 0.0,
            ekf_failures: 0,
            decisions: Vec::new(),
        })
    }

    pub fn kind(&self) -> SupervisorKind {
        self.cfg.kind
    }

    pub fn decisions(&self) -> &[SupervisorDecision] {
        &self.decisions
    }

    pub fn into_decisions(self) -> Vec<SupervisorDecision> {
        self.decisions
    }

    pub fn theta_hat(&self) -> ThetaVector {
        self.theta_hat
    }

    pub fn ekf(&self) -> Option<&Ekf> {
        self.ekf.as_ref()
    }

    /// EKF steps that failed and were skipped.
    pub fn ekf_failures(&self) -> usize {
        self.ekf_failures
    }

    fn uses_ekf(&self) -> bool {
        matches!(self.cfg.kind, SupervisorKind::Ropa | SupervisorKind::Drto)
    }

    /// Disturbances as the supervisor's model sees them.
    fn model_dist(&self, snap: &TwinSnapshot) -> DisturbanceState {
        match (self.cfg.openings_known, self.v_o_model) {
            (false, Some(v_o)) => DisturbanceState { v_o, p_pump: snap.dist.p_pump },
            _ => snap.dist,
        }
    }

    fn init_ekf(&mut self, snap: &TwinSnapshot) {
        let dist = self.model_dist(snap);
        let x = self
            .rig
            .steady_state_solve(&snap.setpoint, &dist, &self.cfg.theta0, &NetworkState::nominal())
            .unwrap_or_else(|_| NetworkState::nominal());
        match Ekf::new(self.rig, self.cfg.ekf.clone(), ExtendedState { x, theta: self.cfg.theta0 }, snap.t) {
            Ok(f) => self.ekf = Some(f),
            Err(e) => log::error!("EKF initialization failed: {e}"),
        }
    }

    fn econ(&mut self, dist: &DisturbanceState) -> Result<SsEconSolution, String> {
        let p = build_ss_econ(
            &self.rig,
            &self.theta_hat,
            dist,
            &self.cfg.econ,
            &self.cfg.constraints,
            &ControlInputs { q_g: self.u_prev },
            &self.steady_guess,
        );
        let r = solve(&p, &self.cfg.solver).map_err(|e| e.to_string())?;
        if r.status != SolveStatus::Converged {
            return Err(format!("economic optimization ended with {:?}", r.status));
        }
        let s = SsEconSolution::decode(&r.x, r.objective);
        self.steady_guess = s.state;
        Ok(s)
    }

    fn decide_fixed(&mut self) -> ([f64; 3], Option<[f64; 3]>, bool, f64, String) {
        (self.cfg.fixed_u, Some(self.cfg.fixed_u), true, 0.0, String::new())
    }

    fn decide_ropa(&mut self, snap: &TwinSnapshot) -> ([f64; 3], Option<[f64; 3]>, bool, f64, String) {
        let dist = self.model_dist(snap);
        let t0 = Instant::now();
        let r = self.econ(&dist);
        let t_opt = t0.elapsed().as_secs_f64() * 1e3;
        match r {
            Ok(s) => {
                let u = filter_and_project(&self.u_prev, &s.q_g, self.cfg.k_u, &self.cfg.constraints);
                (u, Some(s.q_g), true, t_opt, String::new())
            }
            Err(e) => (self.u_prev, None, false, t_opt, e),
        }
    }

    fn decide_ssrto(&mut self, snap: &TwinSnapshot) -> ([f64; 3], Option<[f64; 3]>, bool, f64, String, Option<Vec<bool>>, Option<bool>) {
        let t0 = Instant::now();
        if !self.window.is_full() {
            return (self.u_prev, None, false, 0.0, "detector window not full".into(), None, None);
        }
        let verdict = match self.window.verdict(&self.cfg.ssd) {
            Ok(v) => v,
            Err(e) => return (self.u_prev, None, false, 0.0, e.to_string(), None, None),
        };
        let flags = Some(verdict.per_signal.clone());
        if !verdict.steady {
            let t = t0.elapsed().as_secs_f64() * 1e3;
            self.adapt_ms += t;
            return (self.u_prev, None, false, 0.0, String::new(), flags, Some(false));
        }
        let Some(y_bar) = self.window.mean() else {
            return (self.u_prev, None, false, 0.0, "empty window".into(), flags, Some(true));
        };
        let mut dist = self.model_dist(snap);
        dist.p_pump = y_bar.p_pump;
        let fit = ss_fit(&self.rig, &y_bar, &snap.setpoint, &dist, &self.cfg.fit, &self.theta_hat, &self.steady_guess);
        self.adapt_ms += t0.elapsed().as_secs_f64() * 1e3;
        match fit {
            Ok(out) => {
                self.theta_hat = out.solution.theta;
                self.steady_guess = out.solution.state;
            }
            Err(e) => return (self.u_prev, None, false, 0.0, format!("fit: {e}"), flags, Some(true)),
        }
        let dist = self.model_dist(snap);
        let t1 = Instant::now();
        let r = self.econ(&dist);
        let t_opt = t1.elapsed().as_secs_f64() * 1e3;
        match r {
            Ok(s) => {
                let u = filter_and_project(&self.u_prev, &s.q_g, self.cfg.k_u, &self.cfg.constraints);
                (u, Some(s.q_g), true, t_opt, String::new(), flags, Some(true))
            }
            Err(e) => (self.u_prev, None, false, t_opt, e, flags, Some(true)),
        }
    }

    fn decide_drto(&mut self, snap: &TwinSnapshot) -> ([f64; 3], Option<[f64; 3]>, bool, f64, String) {
        let Some(ekf) = &self.ekf else {
            return (self.u_prev, None, false, 0.0, "estimator not initialized".into());
        };
        let x_hat = ekf.estimate().x;
        let dist = self.model_dist(snap);
        let t0 = Instant::now();
        let warm = self.plan.as_ref().map(|p| p.layout.shift(&p.x));
        let hess = self.plan.as_ref().map(|p| p.hessian.clone());
        let built = build_drto(
            &self.rig,
            &self.theta_hat,
            &x_hat,
            &ControlInputs { q_g: self.u_prev },
            &dist,
            &self.cfg.drto_grid,
            &self.cfg.drto,
            &self.cfg.econ,
            &self.cfg.constraints,
            warm.as_ref(),
        );
        let result = built.map_err(|e| e.to_string()).and_then(|(p, layout)| {
            let p = p.with_hessian(hess);
            let r = solve(&p, &self.cfg.solver).map_err(|e| e.to_string())?;
            if r.status == SolveStatus::Converged {
                Ok((r, layout))
            } else {
                Err(format!("dynamic optimization ended with {:?}", r.status))
            }
        });
        let t_opt = t0.elapsed().as_secs_f64() * 1e3;
        let clip = |u: [f64; 3], prev: &[f64; 3], du: f64| -> [f64; 3] { std::array::from_fn(|i| u[i].clamp(prev[i] - du, prev[i] + du)) };
        match result {
            Ok((r, layout)) => {
                let first = layout.inputs(&r.x, 0);
                let u = self.cfg.constraints.project(clip(first, &self.u_prev, self.cfg.drto.du_max));
                self.plan = Some(Plan { x: r.x, layout, hessian: r.hessian });
                (u, Some(first), true, t_opt, String::new())
            }
            Err(e) => {
                // Fall back on the next move of the previous plan.
                let next = self.plan.take().filter(|p| p.layout.n_p > 1).map(|p| p.layout.inputs(&p.x, 1));
                match next {
                    Some(u) => {
                        let u = self.cfg.constraints.project(clip(u, &self.u_prev, self.cfg.drto.du_max));
                        (u, None, true, t_opt, format!("{e}; applied the previous plan"))
                    }
                    None => (self.u_prev, None, false, t_opt, e),
                }
            }
        }
    }
}

impl Supervisor for RtoSupervisor {
    fn period(&self) -> f64 {
        self.cfg.period_s
    }

    fn observe(&mut self, snap: &TwinSnapshot) {
        if self.v_o_model.is_none() {
            self.v_o_model = Some(snap.dist.v_o);
            self.u_prev = snap.setpoint.q_g;
        }
        self.window.push(snap.t, snap.measured);
        if !self.uses_ekf() {
            return;
        }
        let t0 = Instant::now();
        match &mut self.ekf {
            None => self.init_ekf(snap),
            Some(_) => {
                let dist = self.model_dist(snap);
                let ekf = self.ekf.as_mut().expect("checked");
                match ekf.step(&snap.measured, &snap.setpoint, &dist) {
                    Ok(r) => self.theta_hat = r.theta_hat,
                    Err(e) => {
                        self.ekf_failures += 1;
                        log::warn!("t = {:.0} s: EKF step skipped: {e}", snap.t);
                    }
                }
            }
        }
        self.adapt_ms += t0.elapsed().as_secs_f64() * 1e3;
    }

    fn decide(&mut self, snap: &TwinSnapshot) -> Result<ControlInputs, String> {
        let start = Instant::now();
        let (u, u_star, acted, t_opt, note, ss_flags, steady) = match self.cfg.kind {
            SupervisorKind::Fixed => {
                let (u, s, a, t, n) = self.decide_fixed();
                (u, s, a, t, n, None, None)
            }
            SupervisorKind::Ropa => {
                let (u, s, a, t, n) = self.decide_ropa(snap);
                (u, s, a, t, n, None, None)
            }
            SupervisorKind::Drto => {
                let (u, s, a, t, n) = self.decide_drto(snap);
                (u, s, a, t, n, None, None)
            }
            SupervisorKind::Ssrto => self.decide_ssrto(snap),
        };
        if !note.is_empty() {
            log::info!("t = {:.0} s, {}: {note}", snap.t, self.cfg.kind);
        }
        let t_total = start.elapsed().as_secs_f64() * 1e3;
        // The adaptation time of the filter runs between executions; it is
        // added to the end-to-end figure.
        let t_adapt = std::mem::take(&mut self.adapt_ms);
        let adapt_in_decide = if self.cfg.kind == SupervisorKind::Ssrto { 0.0 } else { t_adapt };
        self.decisions.push(SupervisorDecision {
            t: snap.t,
            kind: self.cfg.kind,
            u_star,
            u_applied: u,
            acted,
            t_adapt_ms: t_adapt,
            t_opt_ms: t_opt,
            t_total_ms: t_total + adapt_in_decide,
            ss_flags,
            steady,
            theta_hat: self.theta_hat,
            note,
        });
        self.u_prev = u;
        Ok(ControlInputs { q_g: u })
    }
}

#[cfg(test)]
mod tests;
