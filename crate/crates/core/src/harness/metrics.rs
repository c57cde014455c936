//! Economic, input-usage and timing metrics. Everything here is a pure
//! function of [`RunData`] and [`TimingRow`]s, so summaries recomputed from
//! persisted logs match the live ones exactly.

use serde::{Deserialize, Serialize};

use super::logio::{RunData, TimingRow};
use crate::nlp::{EconWeights, SsEconConstraints};
use crate::supervisors::SupervisorKind;
use crate::twin::DisturbanceProfile;

pub const SUMMARY_SCHEMA: u32 = 1;
/// Width of the centered moving average of the percent series, s.
pub const MOVING_AVERAGE_S: f64 = 60.0;

/// Instantaneous profit from the measured liquid rates.
pub fn profit_series(q_l: &[[f64; 3]], prices: &EconWeights) -> Vec<f64> {
    q_l.iter().map(|q| prices.profit(q)).collect()
}

/// 100 (J − J_fix) / J_fix over the common prefix of the two series.
pub fn percent_series(j: &[f64], j_fix: &[f64]) -> Vec<f64> {
    j.iter().zip(j_fix).map(|(a, b)| 100.0 * (a - b) / b).collect()
}

/// Centered moving average over `width` seconds. Near the ends only the
/// part of the window that lies inside the record is averaged.
pub fn moving_average(t: &[f64], y: &[f64], width: f64) -> Vec<f64> {
    let half = 0.5 * width + 1e-9;
    let n = y.len().min(t.len());
    let mut out = Vec::with_capacity(n);
    let mut lo = 0;
    let mut hi = 0;
    for k in 0..n {
        while t[lo] < t[k] - half {
            lo += 1;
        }
        while hi < n && t[hi] <= t[k] + half {
            hi += 1;
        }
        out.push(y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
    }
    out
}

/// Trapezoid integral of `y` over `t`, divided by `unit` (60 for minutes).
pub fn cumulative_integral(t: &[f64], y: &[f64], unit: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(y.len());
    for k in 0..y.len().min(t.len()) {
        if k > 0 {
            acc += 0.5 * (y[k] + y[k - 1]) * (t[k] - t[k - 1]) / unit;
        }
        out.push(acc);
    }
    out
}

/// Minimum, lower quartile, median, upper quartile and maximum, with linear
/// interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let (i, frac) = (h.floor() as usize, h - h.floor());
        if i + 1 < v.len() {
            v[i] + frac * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    Some([v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputUsage {
    /// |Δu| between consecutive executions, all wells pooled, sL/min.
    pub n_moves: usize,
    pub quartiles: Option<[f64; 5]>,
    pub max_abs_du: f64,
    pub total_abs_du: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    /// Iterations that ran an optimization.
    pub n_acting: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_adapt_ms: f64,
    pub mean_opt_ms: f64,
}

impl TimingStats {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a TimingRow>) -> Self {
        let acting: Vec<&TimingRow> = rows.into_iter().filter(|r| r.acted).collect();
        let n = acting.len();
        let mean = |f: fn(&TimingRow) -> f64| if n == 0 { 0.0 } else { acting.iter().map(|r| f(r)).sum::<f64>() / n as f64 };
        Self {
            n_acting: n,
            mean_ms: mean(|r| r.t_total_ms),
            min_ms: if n == 0 { 0.0 } else { acting.iter().map(|r| r.t_total_ms).fold(f64::INFINITY, f64::min) },
            max_ms: acting.iter().map(|r| r.t_total_ms).fold(0.0, f64::max),
            mean_adapt_ms: mean(|r| r.t_adapt_ms),
            mean_opt_ms: mean(|r| r.t_opt_ms),
        }
    }
}

/// Metrics of one seed of one supervisor against the baseline of that seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub samples: usize,
    pub decisions: usize,
    pub acted: usize,
    /// ∫ J dt, price units × minutes.
    pub cumulative_profit: f64,
    pub cumulative_profit_fixed: f64,
    /// ∫ 100 (J − J_fix)/J_fix dt, percent × minutes, on the unsmoothed series.
    pub cumulative_pct_min: f64,
    /// Time average of the unsmoothed percent series.
    pub mean_pct: f64,
    /// Final value of the 60-s moving average.
    pub final_pct_ma: f64,
    pub input_usage: InputUsage,
    /// Applied setpoint triples outside the box or above the availability.
    pub infeasible_setpoints: usize,
    pub timing: TimingStats,
    pub failure: Option<String>,
}

pub fn run_metrics(
    run: &RunData,
    baseline: &RunData,
    timing: &[TimingRow],
    prices: &EconWeights,
    cons: &SsEconConstraints,
) -> RunMetrics {
    let n = run.t.len().min(baseline.t.len());
    let t = &run.t[..n];
    let j = profit_series(&run.q_l[..n], prices);
    let j_fix = profit_series(&baseline.q_l[..n], prices);
    let pct = percent_series(&j, &j_fix);
    let ma = moving_average(t, &pct, MOVING_AVERAGE_S);
    let last = |v: Vec<f64>| v.last().copied().unwrap_or(0.0);
    let span = if n > 1 { t[n - 1] - t[0] } else { 0.0 };
    let cum_pct = last(cumulative_integral(t, &pct, 60.0));

    let mut du = Vec::new();
    for w in run.decisions.windows(2) {
        du.extend((0..3).map(|i| (w[1].u_applied[i] - w[0].u_applied[i]).abs()));
    }
    RunMetrics {
        seed: run.seed,
        samples: n,
        decisions: run.decisions.len(),
        acted: run.decisions.iter().filter(|d| d.acted).count(),
        cumulative_profit: last(cumulative_integral(t, &j, 60.0)),
        cumulative_profit_fixed: last(cumulative_integral(t, &j_fix, 60.0)),
        cumulative_pct_min: cum_pct,
        mean_pct: if span > 0.0 { cum_pct * 60.0 / span } else { 0.0 },
        final_pct_ma: last(ma),
        input_usage: InputUsage {
            n_moves: du.len(),
            quartiles: quartiles(&du),
            max_abs_du: du.iter().copied().fold(0.0, f64::max),
            total_abs_du: du.iter().sum(),
        },
        infeasible_setpoints: run.decisions.iter().filter(|d| !cons.is_feasible(&d.u_applied, 1e-8)).count(),
        timing: TimingStats::from_rows(timing),
        failure: run.failure.clone().or_else(|| baseline.failure.as_ref().map(|f| format!("baseline: {f}"))),
    }
}

/// Per-supervisor summary over all seeds, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorSummary {
    pub schema_version: u32,
    pub supervisor: SupervisorKind,
    pub seeds: Vec<u64>,
    pub replicate_note: String,
    pub horizon_s: f64,
    pub prices: EconWeights,
    pub constraints: SsEconConstraints,
    pub scenario: DisturbanceProfile,
    /// Directory of the baseline logs, relative to this summary.
    pub baseline_dir: String,
    pub per_seed: Vec<RunMetrics>,
    pub mean_cumulative_pct_min: f64,
    pub mean_pct: f64,
    pub mean_cumulative_profit: f64,
    pub mean_acted: f64,
    pub input_usage: InputUsage,
    pub infeasible_setpoints: usize,
    /// Over the acting iterations of all seeds.
    pub timing: TimingStats,
    pub failed_seeds: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn summarize(
    supervisor: SupervisorKind,
    horizon_s: f64,
    prices: &EconWeights,
    scenario: &DisturbanceProfile,
    baseline_dir: &str,
    runs: &[(RunData, RunData, Vec<TimingRow>)],
    cons: &SsEconConstraints,
) -> SupervisorSummary {
    let per_seed: Vec<RunMetrics> = runs.iter().map(|(r, b, tm)| run_metrics(r, b, tm, prices, cons)).collect();
    let m = per_seed.len().max(1) as f64;
    let avg = |f: fn(&RunMetrics) -> f64| per_seed.iter().map(f).sum::<f64>() / m;
    let mut du = Vec::new();
    for (r, _, _) in runs {
        for w in r.decisions.windows(2) {
            du.extend((0..3).map(|i| (w[1].u_applied[i] - w[0].u_applied[i]).abs()));
        }
    }
    SupervisorSummary {
        schema_version: SUMMARY_SCHEMA,
        supervisor,
        seeds: per_seed.iter().map(|p| p.seed).collect(),
        replicate_note: format!(
            "averaged over {} seed(s) with identical scenario; four seeds by default to tighten the statistics",
            per_seed.len()
        ),
        horizon_s,
        prices: *prices,
        constraints: *cons,
        scenario: scenario.clone(),
        baseline_dir: baseline_dir.to_string(),
        mean_cumulative_pct_min: avg(|p| p.cumulative_pct_min),
        mean_pct: avg(|p| p.mean_pct),
        mean_cumulative_profit: avg(|p| p.cumulative_profit),
        mean_acted: avg(|p| p.acted as f64),
        input_usage: InputUsage {
            n_moves: du.len(),
            quartiles: quartiles(&du),
            max_abs_du: du.iter().copied().fold(0.0, f64::max),
            total_abs_du: du.iter().sum(),
        },
        infeasible_setpoints: per_seed.iter().map(|p| p.infeasible_setpoints).sum(),
        timing: TimingStats::from_rows(runs.iter().flat_map(|(_, _, tm)| tm.iter())),
        failed_seeds: per_seed.iter().filter(|p| p.failure.is_some()).count(),
        per_seed,
    }
}
