use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::estimation::McConfig;
use crate::model::{PhysicalConstants, Rig, RigGeometry, ThetaVector};
use crate::supervisors::SupervisorConfig;
use crate::twin::{default_depletion_profile, DisturbanceProfile, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Length of each run, s.
    pub horizon_s: f64,
    /// Replicate seeds; every supervisor runs once per seed.
    pub seeds: Vec<u64>,
    /// Run replicates on worker threads. Off by default so that the
    /// wall-time figures are not disturbed by contention.
    pub parallel: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { horizon_s: 1200.0, seeds: vec![1, 2, 3, 4], parallel: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RigSection {
    pub consts: PhysicalConstants,
    pub geom: RigGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepTestConfig {
    /// Well whose gas-lift setpoint is stepped (0-based).
    pub well: usize,
    /// Step size, sL/min.
    pub magnitude: f64,
    pub base_u: [f64; 3],
    pub v_o: [f64; 3],
    pub p_pump_barg: f64,
    /// Time of the step after the start of the record, s.
    pub t_step: f64,
    /// Record length, s.
    pub horizon_s: f64,
}

impl Default for StepTestConfig {
    fn default() -> Self {
        Self { well: 0, magnitude: 1.0, base_u: [2.5; 3], v_o: [0.8, 0.6, 0.8], p_pump_barg: 0.3, t_step: 10.0, horizon_s: 300.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Grid spacing of the brute-force search, sL/min.
    pub grid_step: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { grid_step: 0.1 }
    }
}

/// Everything a CLI invocation needs, loaded from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub rig: RigSection,
    /// Valve coefficients of the twin.
    pub theta_true: ThetaVector,
    pub sim: SimConfig,
    pub supervisor: SupervisorConfig,
    pub step_test: StepTestConfig,
    pub identifiability: McConfig,
    pub oracle: OracleConfig,
    /// Valve openings and pump pressure over time.
    pub scenario: DisturbanceProfile,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSection::default(),
            rig: RigSection::default(),
            theta_true: ThetaVector::default(),
            sim: SimConfig::default(),
            supervisor: SupervisorConfig::default(),
            step_test: StepTestConfig::default(),
            identifiability: McConfig::default(),
            oracle: OracleConfig::default(),
            scenario: default_depletion_profile(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn rig(&self) -> Rig {
        Rig::new(self.rig.consts, self.rig.geom)
    }

    /// Checks every section; messages name the offending section and field.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |section: &str, m: String| Err(HarnessError::Config(format!("{section}: {m}")));
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return err("experiment.seeds", "at least one seed is required".into());
        }
        if !(e.horizon_s > self.supervisor.ssd.window_s) {
            return err("experiment.horizon_s", format!("{} s must exceed the detector window", e.horizon_s));
        }
        let ratio = e.horizon_s / self.sim.sensor_period;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return err("experiment.horizon_s", "must be a multiple of sim.sensor_period".into());
        }
        let c = &self.rig.consts;
        let g = &self.rig.geom;
        if [c.rho_l, c.mu_mix, c.m_gas, c.r_gas, c.t_amb, c.g_acc, c.p_atm, g.diameter, g.length, g.riser_height]
            .iter()
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return err("rig", "constants and geometry must be positive".into());
        }
        if g.riser_height > g.length {
            return err("rig.geom.riser_height", "exceeds the pipe length".into());
        }
        if self.theta_true.to_array().iter().any(|v| !(*v > 0.0)) {
            return err("theta_true", "valve coefficients must be positive".into());
        }
        if let Err(e) = self.sim.validate() {
            return err("sim", e.to_string());
        }
        if let Err(m) = self.supervisor.validate(self.sim.sensor_period) {
            return err("supervisor", m);
        }
        let s = &self.step_test;
        if s.well >= 3 || !(s.t_step >= 0.0 && s.horizon_s > s.t_step) {
            return err("step_test", "well must be 0..2 and 0 <= t_step < horizon_s".into());
        }
        if !(self.oracle.grid_step > 0.0) {
            return err("oracle.grid_step", "must be positive".into());
        }
        if self.identifiability.n_runs < 30 {
            return err("identifiability.n_runs", "must be at least 30".into());
        }
        if let Err(e) = self.identifiability.fit.validate() {
            return err("identifiability.fit", e.to_string());
        }
        Ok(())
    }
}
