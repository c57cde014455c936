//! Lumped physics of the three-well gas-lift network.
//!
//! Each well carries two differential states, the gas and liquid mass
//! holdups. Eliminating the volume constraint makes the algebraic chain
//! triangular, so the model is an explicit ODE:
//!
//! ```text
//! rho_g   = m_g / (V_total - m_l / rho_l)
//! P_bi    = rho_g R T / M_g
//! w_l     = v_o theta_res sqrt(rho_l (P_pump - P_bi))
//! rho_mix = (m_g + m_l) / V_total
//! P_rh    = P_bi - rho_mix g dH - 128 mu (w_g + w_l) L / (pi rho_mix D^4)
//! w_total = theta_top sqrt(rho_mix (P_rh - P_atm))
//! alpha_l = m_l / (m_g + m_l),  w_l_out = alpha_l w_total
//! ```
//!
//! Wells share no terms, so every network-level operation is three
//! independent single-well evaluations.

pub mod dual;
mod jacobian;
mod steady;
mod well;

pub use jacobian::ModelJacobians;
pub use steady::SteadyStateOptions;
pub use well::{OutletSplit, WellEval, WellInputs};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Reference temperature for standard litres (sL/min).
pub const STANDARD_TEMPERATURE: f64 = 293.15;
/// Pascal per bar.
pub const PA_PER_BAR: f64 = 1.0e5;
/// Seconds per minute times litres per cubic metre.
const LPM_PER_M3S: f64 = 60_000.0;

pub const N_WELLS: usize = 3;
/// Length of the measurement vector: 3 riser-head pressures, pump pressure,
/// 3 liquid rates, 3 gas rates.
pub const N_MEAS: usize = 10;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("well {well}: pump pressure {p_pump:.1} Pa does not exceed P_bi {p_bi:.1} Pa")]
    NegativeDrivingPressure { well: usize, p_pump: f64, p_bi: f64 },
    #[error("well {well}: liquid holdup fills the pipe (m_l = {m_l:.4} kg)")]
    PipeFlooded { well: usize, m_l: f64 },
    #[error("well {well}: riser-head pressure {p_rh:.1} Pa below atmospheric")]
    SubAtmosphericHead { well: usize, p_rh: f64 },
    #[error("well {well}: invalid state ({reason})")]
    InvalidState { well: usize, reason: &'static str },
    #[error("steady-state solve did not converge after {iterations} iterations (residual {residual:.3e} kg/s)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("steady-state solve left the feasible regime: {0}")]
    InfeasibleRegime(Box<ModelError>),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Liquid density, kg/m³.
    pub rho_l: f64,
    /// Mixture viscosity (taken as the liquid viscosity), Pa·s.
    pub mu_mix: f64,
    /// Gas molar mass, kg/mol.
    pub m_gas: f64,
    /// Universal gas constant, J/(mol·K).
    pub r_gas: f64,
    /// Ambient temperature, K.
    pub t_amb: f64,
    /// Gravitational acceleration, m/s².
    pub g_acc: f64,
    /// Atmospheric pressure, Pa.
    pub p_atm: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            rho_l: 1000.0,
            mu_mix: 1.0e-3,
            m_gas: 0.02897,
            r_gas: 8.314_462_618,
            t_amb: 293.15,
            g_acc: 9.81,
            p_atm: 101_325.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigGeometry {
    /// Pipe inner diameter, m.
    pub diameter: f64,
    /// Well plus riser length, m.
    pub length: f64,
    /// Riser height, m.
    pub riser_height: f64,
}

impl Default for RigGeometry {
    fn default() -> Self {
        // 2 cm hoses: 1.5 m well section, 2.2 m vertical riser.
        Self { diameter: 0.02, length: 3.7, riser_height: 2.2 }
    }
}

impl RigGeometry {
    pub fn volume(&self) -> f64 {
        PI * self.diameter * self.diameter / 4.0 * self.length
    }
}

/// Valve flow coefficients, in units that give kg/s from sqrt(kg/m³ · Pa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub res: [f64; 3],
    pub top: [f64; 3],
}

impl ThetaVector {
    pub fn to_array(&self) -> [f64; 6] {
        [self.res[0], self.res[1], self.res[2], self.top[0], self.top[1], self.top[2]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { res: [v[0], v[1], v[2]], top: [v[3], v[4], v[5]] }
    }

    pub fn uniform(res: f64, top: f64) -> Self {
        Self { res: [res; 3], top: [top; 3] }
    }
}

impl Default for ThetaVector {
    /// Calibrated so that a fully open reservoir valve, 2.5 sL/min of lift
    /// gas and 0.3 barg pump pressure give 10 L/min at 0.05 barg riser head.
    fn default() -> Self {
        Self::uniform(DEFAULT_THETA_RES, DEFAULT_THETA_TOP)
    }
}

pub const DEFAULT_THETA_RES: f64 = 6.357_086_268_6e-5;
pub const DEFAULT_THETA_TOP: f64 = 8.178_242_123_6e-5;

/// Gas and liquid mass holdups per well, kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub m_g: [f64; 3],
    pub m_l: [f64; 3],
}

impl NetworkState {
    pub fn to_array(&self) -> [f64; 6] {
        [self.m_g[0], self.m_g[1], self.m_g[2], self.m_l[0], self.m_l[1], self.m_l[2]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { m_g: [v[0], v[1], v[2]], m_l: [v[3], v[4], v[5]] }
    }

    pub fn well(&self, i: usize) -> (f64, f64) {
        (self.m_g[i], self.m_l[i])
    }

    pub fn set_well(&mut self, i: usize, m_g: f64, m_l: f64) {
        self.m_g[i] = m_g;
        self.m_l[i] = m_l;
    }

    /// Holdups close to the calibrated operating point; a reasonable
    /// starting guess for steady-state solves.
    pub fn nominal() -> Self {
        Self { m_g: [2.9e-4; 3], m_l: [0.966; 3] }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Gas-lift setpoints, sL/min.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInputs {
    pub q_g: [f64; 3],
}

impl ControlInputs {
    pub const fn uniform(q: f64) -> Self {
        Self { q_g: [q; 3] }
    }

    pub fn total(&self) -> f64 {
        self.q_g.iter().sum()
    }
}

/// Reservoir valve openings and pump outlet pressure (absolute, Pa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceState {
    pub v_o: [f64; 3],
    pub p_pump: f64,
}

impl DisturbanceState {
    pub fn new(v_o: [f64; 3], p_pump_barg: f64, p_atm: f64) -> Self {
        Self { v_o, p_pump: p_atm + p_pump_barg * PA_PER_BAR }
    }
}

/// Intermediate quantities of the algebraic chain for one well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellAlgebraics {
    pub rho_g: f64,
    pub rho_mix: f64,
    pub p_bi: f64,
    pub p_rh: f64,
    pub w_l: f64,
    pub w_total: f64,
    pub w_l_out: f64,
    pub w_g_out: f64,
    pub alpha_l: f64,
}

/// Sensor-like model outputs. Pressures absolute in Pa, liquid rates in
/// L/min, gas rates in sL/min.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOutputs {
    pub p_rh: [f64; 3],
    pub p_pump: f64,
    pub q_l: [f64; 3],
    pub q_g: [f64; 3],
}

/// A (possibly noisy) snapshot of the ten rig sensors, same layout as
/// [`ModelOutputs`].
pub type MeasurementVector = ModelOutputs;

impl ModelOutputs {
    pub fn to_array(&self) -> [f64; N_MEAS] {
        [
            self.p_rh[0], self.p_rh[1], self.p_rh[2], self.p_pump, self.q_l[0], self.q_l[1],
            self.q_l[2], self.q_g[0], self.q_g[1], self.q_g[2],
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            p_rh: [v[0], v[1], v[2]],
            p_pump: v[3],
            q_l: [v[4], v[5], v[6]],
            q_g: [v[7], v[8], v[9]],
        }
    }

    pub fn mean(samples: &[ModelOutputs]) -> Option<ModelOutputs> {
        if samples.is_empty() {
            return None;
        }
        let mut acc = [0.0; N_MEAS];
        for s in samples {
            for (a, v) in acc.iter_mut().zip(s.to_array()) {
                *a += v;
            }
        }
        let n = samples.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Some(Self::from_slice(&acc))
    }
}

/// Physical constants and geometry bundled with the derived constants the
/// equations need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rig {
    pub consts: PhysicalConstants,
    pub geom: RigGeometry,
    v_total: f64,
    /// R T / M_g
    gas_factor: f64,
    /// 128 mu L / (pi D^4)
    friction_factor: f64,
    rho_g_std: f64,
}

impl Default for Rig {
    fn default() -> Self {
        Self::new(PhysicalConstants::default(), RigGeometry::default())
    }
}

impl Rig {
    pub fn new(consts: PhysicalConstants, geom: RigGeometry) -> Self {
        let d4 = geom.diameter.powi(4);
        Self {
            consts,
            geom,
            v_total: geom.volume(),
            gas_factor: consts.r_gas * consts.t_amb / consts.m_gas,
            friction_factor: 128.0 * consts.mu_mix * geom.length / (PI * d4),
            rho_g_std: consts.p_atm * consts.m_gas / (consts.r_gas * STANDARD_TEMPERATURE),
        }
    }

    pub fn v_total(&self) -> f64 {
        self.v_total
    }

    /// Gas density at 1 atm and 293.15 K, kg/m³.
    pub fn standard_gas_density(&self) -> f64 {
        self.rho_g_std
    }

    pub fn slpm_to_kgps(&self, q: f64) -> f64 {
        q / LPM_PER_M3S * self.rho_g_std
    }

    pub fn kgps_to_slpm(&self, w: f64) -> f64 {
        w / self.rho_g_std * LPM_PER_M3S
    }

    pub fn liquid_kgps_to_lpm(&self, w: f64) -> f64 {
        w / self.consts.rho_l * LPM_PER_M3S
    }

    pub fn liquid_lpm_to_kgps(&self, q: f64) -> f64 {
        q / LPM_PER_M3S * self.consts.rho_l
    }

    pub fn gas_mass_flows(&self, inputs: &ControlInputs) -> [f64; 3] {
        inputs.q_g.map(|q| self.slpm_to_kgps(q))
    }

    pub fn to_gauge_bar(&self, p_abs: f64) -> f64 {
        (p_abs - self.consts.p_atm) / PA_PER_BAR
    }

    pub fn well_inputs(
        &self,
        state: &NetworkState,
        w_g: &[f64; 3],
        dist: &DisturbanceState,
        theta: &ThetaVector,
        i: usize,
    ) -> WellInputs {
        WellInputs {
            m_g: state.m_g[i],
            m_l: state.m_l[i],
            w_g: w_g[i],
            v_o: dist.v_o[i],
            p_pump: dist.p_pump,
            theta_res: theta.res[i],
            theta_top: theta.top[i],
            split: OutletSplit::Holdup,
        }
    }

    /// Evaluates the algebraic chain for all three wells.
    pub fn algebraics(
        &self,
        state: &NetworkState,
        w_g: &[f64; 3],
        dist: &DisturbanceState,
        theta: &ThetaVector,
    ) -> Result<[WellAlgebraics; 3]> {
        let mut out = [None; 3];
        for (i, slot) in out.iter_mut().enumerate() {
            let wi = self.well_inputs(state, w_g, dist, theta, i);
            *slot = Some(self.well_algebraics(&wi, i)?);
        }
        Ok(out.map(|a| a.expect("filled above")))
    }

    /// Time derivative of the holdups.
    pub fn rhs(
        &self,
        state: &NetworkState,
        w_g: &[f64; 3],
        dist: &DisturbanceState,
        theta: &ThetaVector,
    ) -> Result<NetworkState> {
        let mut d = NetworkState { m_g: [0.0; 3], m_l: [0.0; 3] };
        for i in 0..N_WELLS {
            let wi = self.well_inputs(state, w_g, dist, theta, i);
            let (dg, dl) = self.well_rhs(&wi, i)?;
            d.set_well(i, dg, dl);
        }
        Ok(d)
    }

    /// Noise-free sensor readings. The liquid flow meters sit upstream of
    /// the reservoir valves, so the liquid channel reports the reservoir
    /// inflow `w_l`; the gas channel reports the injected flow.
    pub fn measurement_map(
        &self,
        state: &NetworkState,
        w_g: &[f64; 3],
        dist: &DisturbanceState,
        theta: &ThetaVector,
    ) -> Result<ModelOutputs> {
        let alg = self.algebraics(state, w_g, dist, theta)?;
        Ok(ModelOutputs {
            p_rh: alg.map(|a| a.p_rh),
            p_pump: dist.p_pump,
            q_l: alg.map(|a| self.liquid_kgps_to_lpm(a.w_l)),
            q_g: w_g.map(|w| self.kgps_to_slpm(w)),
        })
    }

    /// Finds reservoir and top valve coefficients that put the steady
    /// operating point at `q_l_lpm` and `p_rh_barg` for the given lift
    /// gas, opening and pump pressure.
    pub fn calibrate(
        &self,
        q_l_lpm: f64,
        p_rh_barg: f64,
        q_g_slpm: f64,
        v_o: f64,
        p_pump_barg: f64,
    ) -> (f64, f64) {
        let c = &self.consts;
        let w_l = self.liquid_lpm_to_kgps(q_l_lpm);
        let w_g = self.slpm_to_kgps(q_g_slpm);
        let p_rh = c.p_atm + p_rh_barg * PA_PER_BAR;
        let p_pump = c.p_atm + p_pump_barg * PA_PER_BAR;
        let alpha = w_l / (w_l + w_g);
        // P_rh as a function of total holdup is monotone on the admissible
        // range; bisect on it.
        let head = |m_tot: f64| -> (f64, f64, f64) {
            let m_l = alpha * m_tot;
            let m_g = m_tot - m_l;
            let rho_g = m_g / (self.v_total - m_l / c.rho_l);
            let p_bi = rho_g * self.gas_factor;
            let rho_mix = m_tot / self.v_total;
            let p = p_bi
                - rho_mix * c.g_acc * self.geom.riser_height
                - self.friction_factor * (w_g + w_l) / rho_mix;
            (p, p_bi, rho_mix)
        };
        let mut lo = 1e-6;
        let mut hi = c.rho_l * self.v_total / alpha * (1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if head(mid).0 < p_rh {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (_, p_bi, rho_mix) = head(0.5 * (lo + hi));
        let theta_res = w_l / (v_o * (c.rho_l * (p_pump - p_bi)).sqrt());
        let theta_top = (w_l + w_g) / (rho_mix * (p_rh - c.p_atm)).sqrt();
        (theta_res, theta_top)
    }
}
