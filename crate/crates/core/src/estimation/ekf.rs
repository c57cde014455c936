use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::EstimationError;
use crate::integrate::rk4_span_sens;
use crate::model::{
    ControlInputs, DisturbanceState, MeasurementVector, NetworkState, Rig, ThetaVector, DEFAULT_THETA_RES,
    DEFAULT_THETA_TOP, N_MEAS,
};
use crate::twin::NoiseStd;

pub const N_EXT: usize = 12;

type VExt = SVector<f64, N_EXT>;
type MExt = SMatrix<f64, N_EXT, N_EXT>;
type VMeas = SVector<f64, N_MEAS>;

/// Stacked estimate [x; θ] in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState {
    pub x: NetworkState,
    pub theta: ThetaVector,
}

impl ExtendedState {
    pub fn to_array(&self) -> [f64; N_EXT] {
        let (x, t) = (self.x.to_array(), self.theta.to_array());
        std::array::from_fn(|k| if k < 6 { x[k] } else { t[k - 6] })
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { x: NetworkState::from_slice(&v[..6]), theta: ThetaVector::from_slice(&v[6..12]) }
    }
}

fn nominal_ext() -> [f64; N_EXT] {
    let x = NetworkState::nominal().to_array();
    std::array::from_fn(|k| match k {
        0..=5 => x[k],
        6..=8 => DEFAULT_THETA_RES,
        _ => DEFAULT_THETA_TOP,
    })
}

/// Filter tuning. Covariances are diagonal and in physical units: kg² for
/// the holdups, the parameter units squared for θ, and the sensor units
/// squared (Pa, L/min, sL/min) for the measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    /// Initial covariance of [m_g ×3, m_l ×3, θ_res ×3, θ_top ×3].
    pub p0_diag: [f64; N_EXT],
    /// Process noise of the holdups per filter step.
    pub q_x_diag: [f64; 6],
    /// Random-walk covariance of θ per filter step.
    pub q_theta_diag: [f64; 6],
    /// Measurement noise, channel order of [`MeasurementVector`].
    pub r_diag: [f64; N_MEAS],
    /// Filter step, s.
    pub dt: f64,
    /// RK4 step inside one filter step, s.
    pub dt_int: f64,
    /// Box Θ for the projection after each update.
    pub theta_lower: [f64; 6],
    pub theta_upper: [f64; 6],
    /// Factor applied to P0 when the covariance has to be reset.
    pub reset_inflation: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        let nom = nominal_ext();
        let noise = NoiseStd::default().channels();
        Self {
            p0_diag: std::array::from_fn(|k| if k < 6 { (0.01 * nom[k]).powi(2) } else { (0.05 * nom[k]).powi(2) }),
            q_x_diag: std::array::from_fn(|k| (1e-3 * nom[k]).powi(2)),
            q_theta_diag: std::array::from_fn(|k| (0.01 * nom[6 + k]).powi(2)),
            r_diag: noise.map(|s| s * s),
            dt: 1.0,
            dt_int: 0.05,
            theta_lower: std::array::from_fn(|k| 0.5 * nom[6 + k]),
            theta_upper: std::array::from_fn(|k| 2.0 * nom[6 + k]),
            reset_inflation: 4.0,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<(), EstimationError> {
        let positive = |name: &str, v: &[f64]| {
            if v.iter().all(|x| *x > 0.0 && x.is_finite()) {
                Ok(())
            } else {
                Err(EstimationError::Config(format!("{name} must be positive and finite")))
            }
        };
        positive("p0_diag", &self.p0_diag)?;
        positive("q_x_diag", &self.q_x_diag)?;
        positive("q_theta_diag", &self.q_theta_diag)?;
        positive("r_diag", &self.r_diag)?;
        positive("dt", &[self.dt, self.dt_int])?;
        positive("reset_inflation", &[self.reset_inflation])?;
        positive("theta_lower", &self.theta_lower)?;
        if self.theta_lower.iter().zip(&self.theta_upper).any(|(l, u)| !(l <= u)) {
            return Err(EstimationError::Config("theta_lower exceeds theta_upper".into()));
        }
        Ok(())
    }
}

/// Filter output after one measurement update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub t: f64,
    pub theta_hat: ThetaVector,
    pub x_hat: NetworkState,
    /// Posterior variances of [x; θ], physical units.
    pub p_diag: [f64; N_EXT],
    /// y_p − h(x̂⁻, θ̂⁻), sensor units.
    pub innovation: [f64; N_MEAS],
    /// θ components clipped to Θ by this update.
    pub theta_at_bounds: Vec<usize>,
    pub covariance_reset: bool,
}

/// Extended Kalman filter on [x; θ] with a random walk for θ. The
/// covariance is kept in coordinates scaled by nominal magnitudes.
#[derive(Debug, Clone)]
pub struct Ekf {
    rig: Rig,
    cfg: EkfConfig,
    z: VExt,
    /// Covariance of z / scale.
    p: MExt,
    scale: VExt,
    sigma: VMeas,
    t: f64,
    resets: usize,
}

impl Ekf {
    pub fn new(rig: Rig, cfg: EkfConfig, init: ExtendedState, t0: f64) -> Result<Self, EstimationError> {
        cfg.validate()?;
        let scale = VExt::from(nominal_ext());
        let sigma = VMeas::from(cfg.r_diag.map(f64::sqrt));
        let mut f = Self { rig, cfg, z: VExt::zeros(), p: MExt::zeros(), scale, sigma, t: t0, resets: 0 };
        f.reset(init);
        Ok(f)
    }

    /// Restarts from `init` with the prior covariance P0.
    pub fn reset(&mut self, init: ExtendedState) {
        self.z = VExt::from(init.to_array());
        self.p = self.prior();
    }

    fn prior(&self) -> MExt {
        MExt::from_diagonal(&VExt::from_fn(|k, _| self.cfg.p0_diag[k] / self.scale[k].powi(2)))
    }

    pub fn config(&self) -> &EkfConfig {
        &self.cfg
    }

    pub fn estimate(&self) -> ExtendedState {
        ExtendedState::from_slice(self.z.as_slice())
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Number of covariance resets so far.
    pub fn resets(&self) -> usize {
        self.resets
    }

    /// Covariance of [x; θ] in physical units.
    pub fn covariance(&self) -> SMatrix<f64, N_EXT, N_EXT> {
        MExt::from_fn(|i, j| self.p[(i, j)] * self.scale[i] * self.scale[j])
    }

    pub fn set_covariance(&mut self, p: &SMatrix<f64, N_EXT, N_EXT>) {
        self.p = MExt::from_fn(|i, j| p[(i, j)] / (self.scale[i] * self.scale[j]));
    }

    /// Discrete transition matrix of [x; θ] over one filter step, physical
    /// units, together with the propagated mean.
    pub fn transition(&self, u: &ControlInputs, dist: &DisturbanceState) -> Result<(VExt, MExt), EstimationError> {
        let est = self.estimate();
        let w_g = self.rig.gas_mass_flows(u);
        let (xn, phi) = rk4_span_sens(&self.rig, &est.x, &w_g, dist, &est.theta, self.cfg.dt, self.cfg.dt_int)?;
        let mut f = MExt::identity();
        f.fixed_view_mut::<6, 12>(0, 0).copy_from(&phi);
        let mut zn = self.z;
        zn.fixed_rows_mut::<6>(0).copy_from_slice(&xn.to_array());
        Ok((zn, f))
    }

    /// Time update: one RK4 span for x, θ unchanged, P ← F P Fᵀ + Q.
    pub fn predict(&mut self, u: &ControlInputs, dist: &DisturbanceState) -> Result<(), EstimationError> {
        let (zn, f) = self.transition(u, dist)?;
        let fs = MExt::from_fn(|i, j| f[(i, j)] * self.scale[j] / self.scale[i]);
        let q = VExt::from_fn(|k, _| {
            let v = if k < 6 { self.cfg.q_x_diag[k] } else { self.cfg.q_theta_diag[k - 6] };
            v / self.scale[k].powi(2)
        });
        self.p = fs * self.p * fs.transpose() + MExt::from_diagonal(&q);
        self.p = 0.5 * (self.p + self.p.transpose());
        self.z = zn;
        self.t += self.cfg.dt;
        Ok(())
    }

    /// Measurement update with Joseph-form covariance, followed by the
    /// projection of θ onto Θ and of the holdups onto their physical range.
    pub fn update(
        &mut self,
        y: &MeasurementVector,
        u: &ControlInputs,
        dist: &DisturbanceState,
    ) -> Result<EstimateRecord, EstimationError> {
        let est = self.estimate();
        let w_g = self.rig.gas_mass_flows(u);
        let jac = self.rig.jacobians(&est.x, &w_g, dist, &est.theta)?;
        let innovation = VMeas::from(y.to_array()) - jac.meas;
        let nu = innovation.component_div(&self.sigma);
        let h = SMatrix::<f64, N_MEAS, N_EXT>::from_fn(|i, j| {
            let d = if j < 6 { jac.dh_dx[(i, j)] } else { jac.dh_dtheta[(i, j - 6)] };
            d * self.scale[j] / self.sigma[i]
        });
        let s = h * self.p * h.transpose() + SMatrix::<f64, N_MEAS, N_MEAS>::identity();
        let chol = s.cholesky().ok_or(EstimationError::CovarianceNotPd)?;
        // K = P Hᵀ S⁻¹
        let k = chol.solve(&(h * self.p)).transpose();
        let dz = k * nu;
        self.z += dz.component_mul(&self.scale);
        let a = MExt::identity() - k * h;
        self.p = a * self.p * a.transpose() + k * k.transpose();
        self.p = 0.5 * (self.p + self.p.transpose());

        let theta_at_bounds = self.project();
        let mut covariance_reset = false;
        if self.p.cholesky().is_none() {
            log::warn!("t = {:.1} s: EKF covariance lost definiteness, reset to inflated prior", self.t);
            self.p = self.prior() * self.cfg.reset_inflation;
            self.resets += 1;
            covariance_reset = true;
        }
        if !theta_at_bounds.is_empty() {
            log::debug!("t = {:.1} s: EKF θ components {:?} clipped to bounds", self.t, theta_at_bounds);
        }
        let cov = self.covariance();
        let est = self.estimate();
        Ok(EstimateRecord {
            t: self.t,
            theta_hat: est.theta,
            x_hat: est.x,
            p_diag: std::array::from_fn(|i| cov[(i, i)]),
            innovation: innovation.into(),
            theta_at_bounds,
            covariance_reset,
        })
    }

    /// Predict over one filter step with the inputs and disturbances held,
    /// then update with the measurement taken at the end of the step.
    pub fn step(
        &mut self,
        y: &MeasurementVector,
        u: &ControlInputs,
        dist: &DisturbanceState,
    ) -> Result<EstimateRecord, EstimationError> {
        let (z, p, t) = (self.z, self.p, self.t);
        let r = self.predict(u, dist).and_then(|_| self.update(y, u, dist));
        if r.is_err() {
            // Leave the filter where it was so the caller can retry or reset.
            (self.z, self.p, self.t) = (z, p, t);
        }
        r
    }

    fn project(&mut self) -> Vec<usize> {
        let mut hit = Vec::new();
        for k in 0..6 {
            let v = self.z[6 + k];
            let c = v.clamp(self.cfg.theta_lower[k], self.cfg.theta_upper[k]);
            if c != v {
                hit.push(k);
                self.z[6 + k] = c;
            }
        }
        let full = self.rig.consts.rho_l * self.rig.v_total();
        for i in 0..3 {
            self.z[i] = self.z[i].max(1e-6);
            self.z[3 + i] = self.z[3 + i].clamp(0.05, full * (1.0 - 1e-4));
        }
        hit
    }
}
