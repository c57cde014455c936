//! Fixed-step RK4 for the network balances, with optional propagation of
//! the exact step sensitivities.

use nalgebra::{SMatrix, SVector};

use crate::model::{DisturbanceState, NetworkState, Result, Rig, ThetaVector};

type V6 = SVector<f64, 6>;
/// d(state_next) / d[state; theta]
pub type StepSensitivity = SMatrix<f64, 6, 12>;

fn to_v(s: &NetworkState) -> V6 {
    V6::from_column_slice(&s.to_array())
}

fn from_v(v: &V6) -> NetworkState {
    NetworkState::from_slice(v.as_slice())
}

/// One classical RK4 step with inputs and disturbances held constant.
pub fn rk4_step(
    rig: &Rig,
    state: &NetworkState,
    w_g: &[f64; 3],
    dist: &DisturbanceState,
    theta: &ThetaVector,
    dt: f64,
) -> Result<NetworkState> {
    let f = |x: &V6| -> Result<V6> { Ok(to_v(&rig.rhs(&from_v(x), w_g, dist, theta)?)) };
    let x = to_v(state);
    let k1 = f(&x)?;
    let k2 = f(&(x + k1 * (0.5 * dt)))?;
    let k3 = f(&(x + k2 * (0.5 * dt)))?;
    let k4 = f(&(x + k3 * dt))?;
    Ok(from_v(&(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))))
}

/// Integrates over `span` seconds using steps no longer than `dt_max`.
pub fn rk4_span(
    rig: &Rig,
    state: &NetworkState,
    w_g: &[f64; 3],
    dist: &DisturbanceState,
    theta: &ThetaVector,
    span: f64,
    dt_max: f64,
) -> Result<NetworkState> {
    let n = (span / dt_max).ceil().max(1.0) as usize;
    let dt = span / n as f64;
    let mut x = *state;
    for _ in 0..n {
        x = rk4_step(rig, &x, w_g, dist, theta, dt)?;
    }
    Ok(x)
}

/// RK4 step together with the exact derivative of the discrete map with
/// respect to the initial state and the parameters.
pub fn rk4_step_sens(
    rig: &Rig,
    state: &NetworkState,
    w_g: &[f64; 3],
    dist: &DisturbanceState,
    theta: &ThetaVector,
    dt: f64,
) -> Result<(NetworkState, StepSensitivity)> {
    // Stage derivative: dk/dz = Jx(x_stage) * dx_stage/dz + [0 | Jtheta(x_stage)]
    let stage = |x: &V6, dxdz: &StepSensitivity| -> Result<(V6, StepSensitivity)> {
        let j = rig.jacobians(&from_v(x), w_g, dist, theta)?;
        let mut dk = j.drhs_dx * dxdz;
        let mut th = dk.fixed_view_mut::<6, 6>(0, 6);
        th += j.drhs_dtheta;
        Ok((j.rhs, dk))
    };
    let x = to_v(state);
    let mut eye = StepSensitivity::zeros();
    eye.fixed_view_mut::<6, 6>(0, 0).fill_with_identity();

    let (k1, d1) = stage(&x, &eye)?;
    let (k2, d2) = stage(&(x + k1 * (0.5 * dt)), &(eye + d1 * (0.5 * dt)))?;
    let (k3, d3) = stage(&(x + k2 * (0.5 * dt)), &(eye + d2 * (0.5 * dt)))?;
    let (k4, d4) = stage(&(x + k3 * dt), &(eye + d3 * dt))?;
    let xn = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    let phi = eye + (d1 + d2 * 2.0 + d3 * 2.0 + d4) * (dt / 6.0);
    Ok((from_v(&xn), phi))
}

/// Chains [`rk4_step_sens`] over `span` seconds.
pub fn rk4_span_sens(
    rig: &Rig,
    state: &NetworkState,
    w_g: &[f64; 3],
    dist: &DisturbanceState,
    theta: &ThetaVector,
    span: f64,
    dt_max: f64,
) -> Result<(NetworkState, StepSensitivity)> {
    let n = (span / dt_max).ceil().max(1.0) as usize;
    let dt = span / n as f64;
    let mut x = *state;
    let mut total = StepSensitivity::zeros();
    total.fixed_view_mut::<6, 6>(0, 0).fill_with_identity();
    for _ in 0..n {
        let (xn, phi) = rk4_step_sens(rig, &x, w_g, dist, theta, dt)?;
        // [Φx Φθ] ∘ [Tx Tθ; 0 I] = [Φx Tx, Φx Tθ + Φθ]
        let phi_x = phi.fixed_view::<6, 6>(0, 0).into_owned();
        let phi_t = phi.fixed_view::<6, 6>(0, 6).into_owned();
        let tx = total.fixed_view::<6, 6>(0, 0).into_owned();
        let tt = total.fixed_view::<6, 6>(0, 6).into_owned();
        total.fixed_view_mut::<6, 6>(0, 0).copy_from(&(phi_x * tx));
        total.fixed_view_mut::<6, 6>(0, 6).copy_from(&(phi_x * tt + phi_t));
        x = xn;
    }
    Ok((x, total))
}
