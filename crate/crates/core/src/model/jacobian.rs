use nalgebra::{SMatrix, SVector};

use super::dual::var;
use super::{
    DisturbanceState, NetworkState, Result, Rig, ThetaVector, N_MEAS, N_WELLS,
};

/// Partial derivatives of the balances and of the measurement map.
///
/// Rows of the balance blocks follow the state layout
/// `[m_g1, m_g2, m_g3, m_l1, m_l2, m_l3]`; measurement rows follow
/// [`super::ModelOutputs::to_array`]. Input columns are gas injection mass
/// flows in kg/s.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelJacobians {
    pub rhs: SVector<f64, 6>,
    pub drhs_dx: SMatrix<f64, 6, 6>,
    pub drhs_dtheta: SMatrix<f64, 6, 6>,
    pub drhs_du: SMatrix<f64, 6, 3>,
    pub meas: SVector<f64, N_MEAS>,
    pub dh_dx: SMatrix<f64, N_MEAS, 6>,
    pub dh_dtheta: SMatrix<f64, N_MEAS, 6>,
    pub dh_du: SMatrix<f64, N_MEAS, 3>,
}

impl Rig {
    pub fn jacobians(
        &self,
        state: &NetworkState,
        w_g: &[f64; 3],
        dist: &DisturbanceState,
        theta: &ThetaVector,
    ) -> Result<ModelJacobians> {
        let mut j = ModelJacobians {
            rhs: SVector::zeros(),
            drhs_dx: SMatrix::zeros(),
            drhs_dtheta: SMatrix::zeros(),
            drhs_du: SMatrix::zeros(),
            meas: SVector::zeros(),
            dh_dx: SMatrix::zeros(),
            dh_dtheta: SMatrix::zeros(),
            dh_du: SMatrix::zeros(),
        };
        let to_lpm = 60_000.0 / self.consts.rho_l;
        let to_slpm = 60_000.0 / self.standard_gas_density();
        for i in 0..N_WELLS {
            let wi = self.well_inputs(state, w_g, dist, theta, i);
            let ev = self.well_eval(&wi, i)?;
            let (g, l) = (i, 3 + i);
            for (row, d) in [(g, &ev.dm_g), (l, &ev.dm_l)] {
                j.rhs[row] = d.v;
                j.drhs_dx[(row, g)] = d.d[var::M_G];
                j.drhs_dx[(row, l)] = d.d[var::M_L];
                j.drhs_dtheta[(row, i)] = d.d[var::THETA_RES];
                j.drhs_dtheta[(row, 3 + i)] = d.d[var::THETA_TOP];
                j.drhs_du[(row, i)] = d.d[var::W_G];
            }
            let rows = [(i, ev.p_rh, 1.0), (4 + i, ev.w_l, to_lpm)];
            for (row, d, scale) in rows {
                j.meas[row] = d.v * scale;
                j.dh_dx[(row, g)] = d.d[var::M_G] * scale;
                j.dh_dx[(row, l)] = d.d[var::M_L] * scale;
                j.dh_dtheta[(row, i)] = d.d[var::THETA_RES] * scale;
                j.dh_dtheta[(row, 3 + i)] = d.d[var::THETA_TOP] * scale;
                j.dh_du[(row, i)] = d.d[var::W_G] * scale;
            }
            j.meas[7 + i] = w_g[i] * to_slpm;
            j.dh_du[(7 + i, i)] = to_slpm;
        }
        j.meas[3] = dist.p_pump;
        Ok(j)
    }
}
