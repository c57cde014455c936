//! Closed-loop plant emulator: the network model integrated with fixed-step
//! RK4, gas-flow loops as first-order lags, Gaussian sensor noise and a
//! replayed disturbance profile.

mod log;

pub use self::log::{ExperimentLog, LOG_SCHEMA_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{
    ControlInputs, DisturbanceState, MeasurementVector, ModelError, NetworkState, Rig, ThetaVector, N_MEAS,
    PA_PER_BAR,
};

/// Physical range of the gas-flow controllers, sL/min.
pub const ACTUATOR_RANGE: (f64, f64) = (0.0, 6.0);

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TwinError {
    #[error("invalid twin configuration: {0}")]
    Config(String),
    #[error("setpoint {value} sL/min for well {well} outside the actuator range")]
    Setpoint { well: usize, value: f64 },
    #[error("simulation diverged at t = {t:.2} s: {source}")]
    SimulationDiverged { t: f64, source: ModelError },
    #[error("cannot initialize the twin at a steady state: {0}")]
    Initialization(ModelError),
    #[error("supervisor failed at t = {t:.2} s: {message}")]
    Controller { t: f64, message: String },
}

/// Standard deviations of the sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseStd {
    /// Riser-head and pump pressures, Pa.
    pub pressure: f64,
    /// Liquid rates, L/min.
    pub liquid: f64,
    /// Gas rates, sL/min.
    pub gas: f64,
}

impl Default for NoiseStd {
    fn default() -> Self {
        Self { pressure: 50.0, liquid: 0.1, gas: 0.05 }
    }
}

impl NoiseStd {
    pub const ZERO: Self = Self { pressure: 0.0, liquid: 0.0, gas: 0.0 };

    /// Per-channel standard deviations in [`MeasurementVector`] order.
    pub fn channels(&self) -> [f64; N_MEAS] {
        let (p, l, g) = (self.pressure, self.liquid, self.gas);
        [p, p, p, p, l, l, l, g, g, g]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// RK4 step, s.
    pub dt_int: f64,
    /// Sampling period of the sensors, s.
    pub sensor_period: f64,
    /// Closed-loop time constant of the gas-flow controllers, s.
    pub tau_ctrl: f64,
    pub noise_std: NoiseStd,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt_int: 0.05, sensor_period: 1.0, tau_ctrl: 4.0 / 3.0, noise_std: NoiseStd::default(), rng_seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), TwinError> {
        let bad = |m: &str| Err(TwinError::Config(m.to_string()));
        if !(self.dt_int > 0.0) || !(self.sensor_period > 0.0) {
            return bad("dt_int and sensor_period must be positive");
        }
        if self.dt_int > self.sensor_period {
            return bad("dt_int must not exceed sensor_period");
        }
        if !(self.tau_ctrl > 0.0) {
            return bad("tau_ctrl must be positive");
        }
        if self.noise_std.channels().iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise standard deviations must be finite and non-negative");
        }
        Ok(())
    }

    /// Integrator steps per sensor period.
    fn substeps(&self) -> usize {
        (self.sensor_period / self.dt_int).round().max(1.0) as usize
    }
}

/// Disturbance values at one instant of a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceKnot {
    /// s
    pub t: f64,
    pub v_o: [f64; 3],
    /// Pump outlet pressure setpoint, bar gauge.
    pub p_pump_barg: f64,
}

/// Piecewise-linear disturbance trajectory, held constant outside the knot
/// range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DisturbanceKnot>", into = "Vec<DisturbanceKnot>")]
pub struct DisturbanceProfile {
    knots: Vec<DisturbanceKnot>,
}

impl TryFrom<Vec<DisturbanceKnot>> for DisturbanceProfile {
    type Error = TwinError;
    fn try_from(knots: Vec<DisturbanceKnot>) -> Result<Self, TwinError> {
        Self::new(knots)
    }
}

impl From<DisturbanceProfile> for Vec<DisturbanceKnot> {
    fn from(p: DisturbanceProfile) -> Self {
        p.knots
    }
}

impl DisturbanceProfile {
    pub fn new(knots: Vec<DisturbanceKnot>) -> Result<Self, TwinError> {
        if knots.is_empty() {
            return Err(TwinError::Config("disturbance profile needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(TwinError::Config("disturbance knot times must be strictly increasing".into()));
        }
        for k in &knots {
            if k.v_o.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return Err(TwinError::Config(format!("valve openings at t = {} must lie in (0, 1]", k.t)));
            }
            if !(k.p_pump_barg > 0.0) || !k.t.is_finite() {
                return Err(TwinError::Config(format!("pump pressure at t = {} must be above atmospheric", k.t)));
            }
        }
        Ok(Self { knots })
    }

    /// Constant disturbances.
    pub fn constant(v_o: [f64; 3], p_pump_barg: f64) -> Result<Self, TwinError> {
        Self::new(vec![DisturbanceKnot { t: 0.0, v_o, p_pump_barg }])
    }

    pub fn knots(&self) -> &[DisturbanceKnot] {
        &self.knots
    }

    /// Openings and pump gauge pressure at time `t`.
    pub fn knot_at(&self, t: f64) -> DisturbanceKnot {
        let k = &self.knots;
        let j = k.partition_point(|kn| kn.t <= t);
        if j == 0 {
            return DisturbanceKnot { t, ..k[0] };
        }
        if j == k.len() {
            return DisturbanceKnot { t, ..k[k.len() - 1] };
        }
        let (a, b) = (&k[j - 1], &k[j]);
        let s = (t - a.t) / (b.t - a.t);
        let lerp = |x: f64, y: f64| x + s * (y - x);
        DisturbanceKnot {
            t,
            v_o: std::array::from_fn(|i| lerp(a.v_o[i], b.v_o[i])),
            p_pump_barg: lerp(a.p_pump_barg, b.p_pump_barg),
        }
    }

    pub fn at(&self, t: f64, p_atm: f64) -> DisturbanceState {
        let k = self.knot_at(t);
        DisturbanceState { v_o: k.v_o, p_pump: p_atm + k.p_pump_barg * PA_PER_BAR }
    }
}

/// The 20-minute depletion scenario: the reservoir valves of wells 1 and 3
/// close linearly from 0.8 to 0.4, well 1 over minutes 4–12 and well 3 over
/// minutes 12–18; well 2 stays at 0.6 and the pump at 0.3 barg.
pub fn default_depletion_profile() -> DisturbanceProfile {
    let knot = |min: f64, v1: f64, v3: f64| DisturbanceKnot { t: 60.0 * min, v_o: [v1, 0.6, v3], p_pump_barg: 0.3 };
    DisturbanceProfile::new(vec![
        knot(0.0, 0.8, 0.8),
        knot(4.0, 0.8, 0.8),
        knot(12.0, 0.4, 0.8),
        knot(18.0, 0.4, 0.4),
        knot(20.0, 0.4, 0.4),
    ])
    .expect("static profile is valid")
}

/// One sensor sample of the twin together with the hidden truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwinSnapshot {
    /// s
    pub t: f64,
    pub true_state: NetworkState,
    pub true_theta: ThetaVector,
    /// Noisy sensors. Pressures absolute Pa, liquid L/min, gas sL/min.
    pub measured: MeasurementVector,
    /// Gas flows actually delivered by the flow loops, sL/min.
    pub applied_qg: [f64; 3],
    /// Setpoints in force over the next sensor period, sL/min.
    pub setpoint: ControlInputs,
    /// Valve openings and pump pressure (absolute Pa); the openings are
    /// measured disturbances.
    pub dist: DisturbanceState,
}

/// Stateful twin instance with its own random stream.
#[derive(Debug, Clone)]
pub struct Twin {
    rig: Rig,
    cfg: SimConfig,
    profile: DisturbanceProfile,
    theta: ThetaVector,
    state: NetworkState,
    q_g: [f64; 3],
    setpoint: ControlInputs,
    /// Sensor samples taken so far; t = k · sensor_period.
    k: u64,
    rng: ChaCha8Rng,
    noise: [Normal<f64>; N_MEAS],
    last: TwinSnapshot,
}

fn check_setpoints(sp: &ControlInputs) -> Result<(), TwinError> {
    for (well, &value) in sp.q_g.iter().enumerate() {
        if !(value >= ACTUATOR_RANGE.0 && value <= ACTUATOR_RANGE.1) {
            return Err(TwinError::Setpoint { well, value });
        }
    }
    Ok(())
}

impl Twin {
    /// Starts the twin at the steady state of `setpoints` under the
    /// disturbances at t = 0, with the flow loops settled.
    pub fn new(
        rig: Rig,
        cfg: SimConfig,
        profile: DisturbanceProfile,
        theta: ThetaVector,
        setpoints: ControlInputs,
    ) -> Result<Self, TwinError> {
        check_setpoints(&setpoints)?;
        let dist = profile.at(0.0, rig.consts.p_atm);
        let state = rig
            .steady_state_solve(&setpoints, &dist, &theta, &NetworkState::nominal())
            .map_err(TwinError::Initialization)?;
        Self::with_state(rig, cfg, profile, theta, setpoints, state)
    }

    /// Starts the twin at an arbitrary state.
    pub fn with_state(
        rig: Rig,
        cfg: SimConfig,
        profile: DisturbanceProfile,
        theta: ThetaVector,
        setpoints: ControlInputs,
        state: NetworkState,
    ) -> Result<Self, TwinError> {
        cfg.validate()?;
        check_setpoints(&setpoints)?;
        let noise = cfg.noise_std.channels().map(|s| Normal::new(0.0, s).expect("validated"));
        let dist = profile.at(0.0, rig.consts.p_atm);
        let mut twin = Self {
            rig,
            cfg,
            profile,
            theta,
            state,
            q_g: setpoints.q_g,
            setpoint: setpoints,
            k: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            noise,
            last: TwinSnapshot {
                t: 0.0,
                true_state: state,
                true_theta: theta,
                measured: MeasurementVector::from_slice(&[0.0; N_MEAS]),
                applied_qg: setpoints.q_g,
                setpoint: setpoints,
                dist,
            },
        };
        twin.last = twin.sample(0.0, dist).map_err(|source| TwinError::SimulationDiverged { t: 0.0, source })?;
        Ok(twin)
    }

    pub fn rig(&self) -> &Rig {
        &self.rig
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn profile(&self) -> &DisturbanceProfile {
        &self.profile
    }

    pub fn snapshot(&self) -> &TwinSnapshot {
        &self.last
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.cfg.sensor_period
    }

    /// Changes the plant's valve coefficients from now on (plant-model
    /// mismatch experiments).
    pub fn set_true_theta(&mut self, theta: ThetaVector) {
        self.theta = theta;
        self.last.true_theta = theta;
    }

    /// Gas flows of the first-order loops `s` seconds after `q0`.
    fn lag(&self, q0: &[f64; 3], s: f64) -> [f64; 3] {
        let decay = (-s / self.cfg.tau_ctrl).exp();
        std::array::from_fn(|i| self.setpoint.q_g[i] + (q0[i] - self.setpoint.q_g[i]) * decay)
    }

    fn sample(&mut self, t: f64, dist: DisturbanceState) -> Result<TwinSnapshot, ModelError> {
        let w_g = self.rig.gas_mass_flows(&ControlInputs { q_g: self.q_g });
        let clean = self.rig.measurement_map(&self.state, &w_g, &dist, &self.theta)?.to_array();
        let mut noisy = [0.0; N_MEAS];
        for (c, (v, n)) in noisy.iter_mut().zip(clean.iter().zip(&self.noise)) {
            *c = v + n.sample(&mut self.rng);
        }
        Ok(TwinSnapshot {
            t,
            true_state: self.state,
            true_theta: self.theta,
            measured: MeasurementVector::from_slice(&noisy),
            applied_qg: self.q_g,
            setpoint: self.setpoint,
            dist,
        })
    }

    /// Applies `setpoints`, advances one sensor period and samples the
    /// sensors.
    ///
    /// Within the period the gas flows follow their lag exactly and the
    /// disturbances are evaluated at every RK4 stage time.
    pub fn step(&mut self, setpoints: &ControlInputs) -> Result<TwinSnapshot, TwinError> {
        check_setpoints(setpoints)?;
        self.setpoint = *setpoints;
        let t0 = self.time();
        let n = self.cfg.substeps();
        let dt = self.cfg.sensor_period / n as f64;
        let p_atm = self.rig.consts.p_atm;
        let q_start = self.q_g;
        let mut x = self.state.to_array();
        for s in 0..n {
            let ts = s as f64 * dt;
            let f = |x: &[f64; 6], tau: f64| -> Result<[f64; 6], ModelError> {
                let q = self.lag(&q_start, tau);
                let w = self.rig.gas_mass_flows(&ControlInputs { q_g: q });
                let d = self.profile.at(t0 + tau, p_atm);
                Ok(self.rig.rhs(&NetworkState::from_slice(x), &w, &d, &self.theta)?.to_array())
            };
            let axpy = |a: &[f64; 6], k: &[f64; 6], h: f64| -> [f64; 6] { std::array::from_fn(|i| a[i] + h * k[i]) };
            let diverged = |source| TwinError::SimulationDiverged { t: t0 + ts, source };
            let k1 = f(&x, ts).map_err(diverged)?;
            let k2 = f(&axpy(&x, &k1, 0.5 * dt), ts + 0.5 * dt).map_err(diverged)?;
            let k3 = f(&axpy(&x, &k2, 0.5 * dt), ts + 0.5 * dt).map_err(diverged)?;
            let k4 = f(&axpy(&x, &k3, dt), ts + dt).map_err(diverged)?;
            x = std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        }
        let t1 = t0 + self.cfg.sensor_period;
        self.state = NetworkState::from_slice(&x);
        self.q_g = self.lag(&q_start, self.cfg.sensor_period);
        self.k += 1;
        let t = self.time();
        let dist = self.profile.at(t, p_atm);
        self.last = self.sample(t, dist).map_err(|source| TwinError::SimulationDiverged { t: t1, source })?;
        Ok(self.last)
    }
}

/// Decision layer driven by [`run_scenario`].
pub trait Supervisor {
    /// Decision period, s. Must be a multiple of the sensor period.
    fn period(&self) -> f64;

    /// Called with every sensor sample, before any decision at that time.
    fn observe(&mut self, _snapshot: &TwinSnapshot) {}

    /// New setpoints for the coming period.
    fn decide(&mut self, snapshot: &TwinSnapshot) -> Result<ControlInputs, String>;
}

/// Holds a setpoint schedule: piecewise constant, each entry taking effect
/// at its time.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub changes: Vec<(f64, ControlInputs)>,
    pub period: f64,
}

impl Supervisor for Schedule {
    fn period(&self) -> f64 {
        self.period
    }

    fn decide(&mut self, snapshot: &TwinSnapshot) -> Result<ControlInputs, String> {
        Ok(self
            .changes
            .iter()
            .take_while(|(t, _)| *t <= snapshot.t + 1e-9)
            .last()
            .map(|(_, u)| *u)
            .unwrap_or(snapshot.setpoint))
    }
}

/// Runs the twin for `horizon` seconds under `supervisor`.
///
/// The log holds the initial sample and one sample per sensor period. A
/// failure ends the run; the samples up to that point are kept and the
/// error is stored in the log.
pub fn run_scenario(twin: &mut Twin, supervisor: &mut dyn Supervisor, horizon: f64) -> ExperimentLog {
    let mut log = ExperimentLog::new(*twin.rig());
    let ts = twin.config().sensor_period;
    let steps = (horizon / ts).round() as u64;
    let every = ((supervisor.period() / ts).round() as u64).max(1);
    if (steps as f64 * ts - horizon).abs() > 1e-9 * horizon.max(1.0) {
        log.failure = Some(TwinError::Config(format!("horizon {horizon} s is not a multiple of the sensor period")));
        return log;
    }
    let mut snap = *twin.snapshot();
    log.samples.push(snap);
    let mut setpoint = snap.setpoint;
    for k in 0..steps {
        supervisor.observe(&snap);
        if k % every == 0 {
            match supervisor.decide(&snap) {
                Ok(u) => setpoint = u,
                Err(message) => {
                    log.failure = Some(TwinError::Controller { t: snap.t, message });
                    return log;
                }
            }
        }
        match twin.step(&setpoint) {
            Ok(s) => {
                snap = s;
                log.samples.push(snap);
            }
            Err(e) => {
                log.failure = Some(e);
                return log;
            }
        }
    }
    log
}
