use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::HarnessError;
use crate::model::ControlInputs;
use crate::twin::{run_scenario, DisturbanceProfile, NoiseStd, Schedule, SimConfig, Twin, ACTUATOR_RANGE};

/// Fraction of the terminal change that defines the response time.
const CROSSING: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTestReport {
    pub well: usize,
    pub magnitude: f64,
    /// Time for the delivered gas rate to reach 95% of its change, s.
    pub control_response_s: f64,
    /// Time for the liquid rate to reach 95% of its change, s.
    pub plant_response_s: f64,
    /// Suggested execution period of the adaptation loop, s.
    pub recommended_period_s: f64,
    pub control_change: f64,
    pub plant_change: f64,
    /// Time since the step and the stepped well's traces.
    pub t: Vec<f64>,
    pub q_g_applied: Vec<f64>,
    pub q_l: Vec<f64>,
}

/// Half the gap between the plant and control-layer response times,
/// rounded to whole seconds and at least 1 s.
pub fn recommended_period(plant: f64, control: f64) -> f64 {
    (0.5 * (plant - control)).round().max(1.0)
}

/// Time after `t_step` at which `y` first covers 95% of its terminal
/// change, interpolating linearly between samples.
fn response_time(t: &[f64], y: &[f64], t_step: f64, what: &str) -> Result<(f64, f64), HarnessError> {
    let k0 = t.iter().rposition(|&s| s <= t_step + 1e-9).unwrap_or(0);
    let (y0, yf) = (y[k0], y[y.len() - 1]);
    let change = yf - y0;
    if !(change.abs() > 1e-9 * y0.abs().max(1.0)) {
        return Err(HarnessError::NoSettling(format!("{what} shows no change after the step")));
    }
    let span = t[t.len() - 1] - t_step;
    let tail = t.iter().position(|&s| s >= t[t.len() - 1] - 0.25 * span).unwrap_or(0);
    let wander = y[tail..].iter().map(|v| (v - yf).abs()).fold(0.0, f64::max);
    if wander > 0.02 * change.abs() {
        return Err(HarnessError::NoSettling(format!("{what} still moving at the end of the record")));
    }
    let frac = |k: usize| (y[k] - y0) / change;
    for k in k0 + 1..y.len() {
        if frac(k) >= CROSSING {
            let (a, b) = (frac(k - 1), frac(k));
            let s = if b > a { ((CROSSING - a) / (b - a)).clamp(0.0, 1.0) } else { 1.0 };
            return Ok((t[k - 1] + s * (t[k] - t[k - 1]) - t_step, change));
        }
    }
    Err(HarnessError::NoSettling(format!("{what} never reaches 95% of its change")))
}

/// Steps one well's gas-lift setpoint on a noise-free twin that starts at
/// steady state, and measures the control-layer and plant response times.
pub fn step_test(cfg: &ExperimentConfig) -> Result<StepTestReport, HarnessError> {
    let s = &cfg.step_test;
    if s.well >= 3 {
        return Err(HarnessError::Config(format!("step_test.well = {} out of range", s.well)));
    }
    let mut u1 = s.base_u;
    u1[s.well] += s.magnitude;
    let in_range = |v: f64| v >= ACTUATOR_RANGE.0 && v <= ACTUATOR_RANGE.1;
    if !s.base_u.iter().chain(u1.iter()).all(|&v| in_range(v)) {
        return Err(HarnessError::Config("step_test: setpoints leave the actuator range".into()));
    }
    let sim = SimConfig { noise_std: NoiseStd::ZERO, ..cfg.sim };
    let profile = DisturbanceProfile::constant(s.v_o, s.p_pump_barg).map_err(|e| HarnessError::Config(format!("step_test: {e}")))?;
    let mut twin = Twin::new(cfg.rig(), sim, profile, cfg.theta_true, ControlInputs { q_g: s.base_u })
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let mut schedule = Schedule { changes: vec![(s.t_step, ControlInputs { q_g: u1 })], period: sim.sensor_period };
    let log = run_scenario(&mut twin, &mut schedule, s.horizon_s);
    if let Some(e) = log.failure {
        return Err(HarnessError::Runtime(e.to_string()));
    }
    let t: Vec<f64> = log.samples.iter().map(|x| x.t).collect();
    let q_g: Vec<f64> = log.samples.iter().map(|x| x.applied_qg[s.well]).collect();
    let q_l: Vec<f64> = log.samples.iter().map(|x| x.measured.q_l[s.well]).collect();
    let (control, control_change) = response_time(&t, &q_g, s.t_step, "delivered gas rate")?;
    let (plant, plant_change) = response_time(&t, &q_l, s.t_step, "liquid rate")?;
    Ok(StepTestReport {
        well: s.well,
        magnitude: s.magnitude,
        control_response_s: control,
        plant_response_s: plant,
        recommended_period_s: recommended_period(plant, control),
        control_change,
        plant_change,
        t: t.iter().map(|x| x - s.t_step).collect(),
        q_g_applied: q_g,
        q_l,
    })
}
