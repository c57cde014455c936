use serde::Serialize;

use super::config::ExperimentConfig;
use super::HarnessError;
use crate::model::{ControlInputs, NetworkState};
use crate::nlp::{brute_force_ss_oracle, build_ss_econ, solve, OracleResult, SolveStatus, SsEconSolution};

/// Steady-state economic optimum at the scenario's initial disturbances,
/// from the grid search and from the SQP solver.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub v_o: [f64; 3],
    pub p_pump_barg: f64,
    pub grid_step: f64,
    pub grid: OracleResult,
    pub sqp_q_g: [f64; 3],
    pub sqp_profit: f64,
    pub sqp_status: SolveStatus,
    /// Largest per-well gap between the two argmax triples, sL/min.
    pub max_argmax_gap: f64,
    /// 100 (J_sqp − J_grid) / J_grid.
    pub profit_gap_pct: f64,
}

pub fn oracle_report(cfg: &ExperimentConfig) -> Result<OracleReport, HarnessError> {
    let rig = cfg.rig();
    let knot = cfg.scenario.knot_at(0.0);
    let dist = cfg.scenario.at(0.0, rig.consts.p_atm);
    let (w, c) = (&cfg.supervisor.econ, &cfg.supervisor.constraints);
    let grid = brute_force_ss_oracle(&rig, &cfg.theta_true, &dist, w, c, cfg.oracle.grid_step);
    if !grid.profit.is_finite() {
        return Err(HarnessError::Runtime("no grid point satisfies the constraints".into()));
    }
    let p = build_ss_econ(&rig, &cfg.theta_true, &dist, w, c, &ControlInputs { q_g: cfg.supervisor.fixed_u }, &NetworkState::nominal());
    let r = solve(&p, &cfg.supervisor.solver).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let sol = SsEconSolution::decode(&r.x, r.objective);
    Ok(OracleReport {
        v_o: knot.v_o,
        p_pump_barg: knot.p_pump_barg,
        grid_step: cfg.oracle.grid_step,
        max_argmax_gap: (0..3).map(|i| (sol.q_g[i] - grid.q_g[i]).abs()).fold(0.0, f64::max),
        profit_gap_pct: 100.0 * (sol.profit - grid.profit) / grid.profit,
        grid,
        sqp_q_g: sol.q_g,
        sqp_profit: sol.profit,
        sqp_status: r.status,
    })
}
