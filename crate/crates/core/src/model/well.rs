use super::dual::{var, Dual, Real};
use super::{ModelError, Result, Rig, WellAlgebraics};

/// How the outlet flow is split between liquid and gas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutletSplit {
    /// Outlet liquid fraction equals the holdup liquid fraction.
    Holdup,
    /// Outlet liquid fraction is a free parameter.
    Fixed(f64),
}

/// Everything a single-well evaluation depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellInputs {
    pub m_g: f64,
    pub m_l: f64,
    pub w_g: f64,
    pub v_o: f64,
    pub p_pump: f64,
    pub theta_res: f64,
    pub theta_top: f64,
    pub split: OutletSplit,
}

/// Algebraics, balances and their partial derivatives for one well.
#[derive(Debug, Clone, Copy)]
pub struct WellEval {
    pub alg: WellAlgebraics,
    pub dm_g: Dual,
    pub dm_l: Dual,
    pub p_rh: Dual,
    pub p_bi: Dual,
    pub w_l: Dual,
}

struct Chain<T> {
    rho_g: T,
    rho_mix: T,
    p_bi: T,
    p_rh: T,
    w_l: T,
    w_total: T,
    w_l_out: T,
    w_g_out: T,
    alpha_l: T,
}

impl Rig {
    fn chain<T: Real>(
        &self,
        well: usize,
        m_g: T,
        m_l: T,
        w_g: T,
        v_o: T,
        p_pump: T,
        theta_res: T,
        theta_top: T,
        alpha_out: Option<T>,
    ) -> Result<Chain<T>> {
        let c = &self.consts;
        if !(m_g.val() > 0.0) {
            return Err(ModelError::InvalidState { well, reason: "gas holdup must be positive" });
        }
        if !(m_l.val() > 0.0) {
            return Err(ModelError::InvalidState { well, reason: "liquid holdup must be positive" });
        }
        let v_gas = -(m_l / c.rho_l) + self.v_total;
        if !(v_gas.val() > 0.0) {
            return Err(ModelError::PipeFlooded { well, m_l: m_l.val() });
        }
        let rho_g = m_g / v_gas;
        let p_bi = rho_g * self.gas_factor;
        let drive = p_pump - p_bi;
        if !(drive.val() > 0.0) {
            return Err(ModelError::NegativeDrivingPressure {
                well,
                p_pump: p_pump.val(),
                p_bi: p_bi.val(),
            });
        }
        let w_l = v_o * theta_res * (drive * c.rho_l).sqrt();
        let m_tot = m_g + m_l;
        let rho_mix = m_tot / self.v_total;
        let p_rh = p_bi
            - rho_mix * (c.g_acc * self.geom.riser_height)
            - (w_g + w_l) * self.friction_factor / rho_mix;
        let head = p_rh - c.p_atm;
        if head.val() < 0.0 {
            return Err(ModelError::SubAtmosphericHead { well, p_rh: p_rh.val() });
        }
        let w_total = theta_top * (rho_mix * head).sqrt();
        let alpha_l = m_l / m_tot;
        let split = alpha_out.unwrap_or(alpha_l);
        let w_l_out = split * w_total;
        let w_g_out = w_total - w_l_out;
        Ok(Chain { rho_g, rho_mix, p_bi, p_rh, w_l, w_total, w_l_out, w_g_out, alpha_l })
    }

    pub(crate) fn well_algebraics(&self, wi: &WellInputs, well: usize) -> Result<WellAlgebraics> {
        let alpha = match wi.split {
            OutletSplit::Holdup => None,
            OutletSplit::Fixed(a) => Some(a),
        };
        let ch = self.chain(
            well, wi.m_g, wi.m_l, wi.w_g, wi.v_o, wi.p_pump, wi.theta_res, wi.theta_top, alpha,
        )?;
        Ok(WellAlgebraics {
            rho_g: ch.rho_g,
            rho_mix: ch.rho_mix,
            p_bi: ch.p_bi,
            p_rh: ch.p_rh,
            w_l: ch.w_l,
            w_total: ch.w_total,
            w_l_out: ch.w_l_out,
            w_g_out: ch.w_g_out,
            alpha_l: ch.alpha_l,
        })
    }

    /// (dm_g/dt, dm_l/dt) for one well.
    pub(crate) fn well_rhs(&self, wi: &WellInputs, well: usize) -> Result<(f64, f64)> {
        let a = self.well_algebraics(wi, well)?;
        Ok((wi.w_g - a.w_g_out, a.w_l - a.w_l_out))
    }

    /// Single-well evaluation carrying exact partial derivatives with
    /// respect to every input listed in [`var`].
    pub fn well_eval(&self, wi: &WellInputs, well: usize) -> Result<WellEval> {
        let alpha = match wi.split {
            OutletSplit::Holdup => None,
            OutletSplit::Fixed(a) => Some(Dual::var(a, var::ALPHA)),
        };
        let ch = self.chain(
            well,
            Dual::var(wi.m_g, var::M_G),
            Dual::var(wi.m_l, var::M_L),
            Dual::var(wi.w_g, var::W_G),
            Dual::var(wi.v_o, var::V_O),
            Dual::var(wi.p_pump, var::P_PUMP),
            Dual::var(wi.theta_res, var::THETA_RES),
            Dual::var(wi.theta_top, var::THETA_TOP),
            alpha,
        )?;
        let dm_g = Dual::var(wi.w_g, var::W_G) - ch.w_g_out;
        let dm_l = ch.w_l - ch.w_l_out;
        Ok(WellEval {
            alg: WellAlgebraics {
                rho_g: ch.rho_g.v,
                rho_mix: ch.rho_mix.v,
                p_bi: ch.p_bi.v,
                p_rh: ch.p_rh.v,
                w_l: ch.w_l.v,
                w_total: ch.w_total.v,
                w_l_out: ch.w_l_out.v,
                w_g_out: ch.w_g_out.v,
                alpha_l: ch.alpha_l.v,
            },
            dm_g,
            dm_l,
            p_rh: ch.p_rh,
            p_bi: ch.p_bi,
            w_l: ch.w_l,
        })
    }
}
