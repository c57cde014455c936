use super::dual::var;
use super::{
    ControlInputs, DisturbanceState, ModelError, NetworkState, Result, Rig, ThetaVector,
    WellInputs, N_WELLS,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    /// Infinity norm of the balances, kg/s.
    pub tol: f64,
    pub max_iter: usize,
    /// Seconds of relaxation integration used when Newton stalls.
    pub relax_horizon: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 60, relax_horizon: 120.0 }
    }
}

/// Liquid balance scale for the Newton merit, kg/s.
const LIQUID_SCALE: f64 = 0.1;

impl Rig {
    /// Steady holdups for fixed inputs and disturbances. Each well is solved
    /// on its own since the wells do not interact.
    pub fn steady_state_solve(
        &self,
        inputs: &ControlInputs,
        dist: &DisturbanceState,
        theta: &ThetaVector,
        guess: &NetworkState,
    ) -> Result<NetworkState> {
        self.steady_state_solve_with(inputs, dist, theta, guess, &SteadyStateOptions::default())
    }

    pub fn steady_state_solve_with(
        &self,
        inputs: &ControlInputs,
        dist: &DisturbanceState,
        theta: &ThetaVector,
        guess: &NetworkState,
        opts: &SteadyStateOptions,
    ) -> Result<NetworkState> {
        let w_g = self.gas_mass_flows(inputs);
        let mut out = *guess;
        for i in 0..N_WELLS {
            let wi = self.well_inputs(guess, &w_g, dist, theta, i);
            let (m_g, m_l) = self.solve_well_steady(&wi, i, opts)?;
            out.set_well(i, m_g, m_l);
        }
        Ok(out)
    }

    /// Damped Newton on the two balances of one well, starting from the
    /// holdups in `wi`. Falls back to integrating the well dynamics for a
    /// while and retrying when Newton stalls.
    pub fn solve_well_steady(
        &self,
        wi: &WellInputs,
        well: usize,
        opts: &SteadyStateOptions,
    ) -> Result<(f64, f64)> {
        match self.newton_well(wi, well, opts) {
            Ok(x) => Ok(x),
            Err(first) => {
                let mut start = *wi;
                if self.well_rhs(&start, well).is_err() {
                    let nominal = NetworkState::nominal();
                    start.m_g = nominal.m_g[well];
                    start.m_l = nominal.m_l[well];
                }
                match self.relax_well(&start, well, opts.relax_horizon) {
                    Some((m_g, m_l)) => {
                        self.newton_well(&WellInputs { m_g, m_l, ..start }, well, opts)
                    }
                    None => Err(first),
                }
            }
        }
    }

    fn newton_well(&self, wi: &WellInputs, well: usize, opts: &SteadyStateOptions) -> Result<(f64, f64)> {
        let gas_scale = wi.w_g.abs().max(1e-6);
        let merit = |r: (f64, f64)| (r.0 / gas_scale).powi(2) + (r.1 / LIQUID_SCALE).powi(2);
        let mut x = (wi.m_g, wi.m_l);
        let mut ev = self
            .well_eval(&WellInputs { m_g: x.0, m_l: x.1, ..*wi }, well)
            .map_err(|e| ModelError::InfeasibleRegime(Box::new(e)))?;
        let mut res = (ev.dm_g.v, ev.dm_l.v);
        for it in 0..opts.max_iter {
            if res.0.abs().max(res.1.abs()) < opts.tol {
                return Ok(x);
            }
            let (a, b) = (ev.dm_g.d[var::M_G], ev.dm_g.d[var::M_L]);
            let (c, d) = (ev.dm_l.d[var::M_G], ev.dm_l.d[var::M_L]);
            let det = a * d - b * c;
            if det == 0.0 || !det.is_finite() {
                return Err(ModelError::NoConvergence { iterations: it, residual: res.0.abs().max(res.1.abs()) });
            }
            let dx0 = -(d * res.0 - b * res.1) / det;
            let dx1 = -(-c * res.0 + a * res.1) / det;
            let m0 = merit(res);
            let mut step = 1.0;
            let mut last_err = None;
            let mut accepted = false;
            for _ in 0..40 {
                let trial = (x.0 + step * dx0, x.1 + step * dx1);
                match self.well_eval(&WellInputs { m_g: trial.0, m_l: trial.1, ..*wi }, well) {
                    Ok(tev) => {
                        let tres = (tev.dm_g.v, tev.dm_l.v);
                        if merit(tres) <= (1.0 - 1e-4 * step) * m0 || merit(tres) == 0.0 {
                            x = trial;
                            ev = tev;
                            res = tres;
                            accepted = true;
                            break;
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
                step *= 0.5;
            }
            if !accepted {
                if res.0.abs().max(res.1.abs()) < opts.tol {
                    return Ok(x);
                }
                return Err(match last_err {
                    Some(e) => ModelError::InfeasibleRegime(Box::new(e)),
                    None => ModelError::NoConvergence {
                        iterations: it,
                        residual: res.0.abs().max(res.1.abs()),
                    },
                });
            }
        }
        let r = res.0.abs().max(res.1.abs());
        if r < opts.tol {
            Ok(x)
        } else {
            Err(ModelError::NoConvergence { iterations: opts.max_iter, residual: r })
        }
    }

    /// RK4 integration of a single well with frozen inputs.
    fn relax_well(&self, wi: &WellInputs, well: usize, horizon: f64) -> Option<(f64, f64)> {
        let dt = 0.02;
        let steps = (horizon / dt).ceil() as usize;
        let f = |m_g: f64, m_l: f64| self.well_rhs(&WellInputs { m_g, m_l, ..*wi }, well).ok();
        let (mut g, mut l) = (wi.m_g, wi.m_l);
        for _ in 0..steps {
            let k1 = f(g, l)?;
            let k2 = f(g + 0.5 * dt * k1.0, l + 0.5 * dt * k1.1)?;
            let k3 = f(g + 0.5 * dt * k2.0, l + 0.5 * dt * k2.1)?;
            let k4 = f(g + dt * k3.0, l + dt * k3.1)?;
            g += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            l += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        Some((g, l))
    }
}
