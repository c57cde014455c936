use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::logio::{read_run_log, read_timing};
use super::metrics::SupervisorSummary;
use super::run::load_summary;
use super::HarnessError;
use crate::supervisors::SupervisorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparedRun {
    pub label: String,
    pub dir: String,
    pub supervisor: SupervisorKind,
    pub mean_cumulative_pct_min: f64,
    pub mean_pct: f64,
    pub mean_cumulative_profit: f64,
    pub mean_iteration_ms: f64,
    pub acting_iterations: usize,
    pub du_quartiles: Option<[f64; 5]>,
    pub max_abs_du: f64,
    pub infeasible_setpoints: usize,
}

/// Differences `b − a` between two compared runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDelta {
    pub a: String,
    pub b: String,
    pub d_cumulative_pct_min: f64,
    pub d_mean_pct: f64,
    pub d_cumulative_profit: f64,
    pub d_mean_iteration_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    pub horizon_s: f64,
    pub runs: Vec<ComparedRun>,
    pub deltas: Vec<RunDelta>,
    /// Labels by decreasing cumulative percent difference.
    pub profit_ordering: Vec<String>,
    /// Labels by increasing mean iteration time over acting iterations; the
    /// fixed baseline is left out.
    pub timing_ordering: Vec<String>,
}

impl ComparisonReport {
    pub fn run(&self, kind: SupervisorKind) -> Option<&ComparedRun> {
        self.runs.iter().find(|r| r.supervisor == kind)
    }
}

fn check_compatible(first: &SupervisorSummary, other: &SupervisorSummary, dir: &Path) -> Result<(), HarnessError> {
    let why = if first.scenario != other.scenario {
        "scenario differs"
    } else if first.seeds != other.seeds {
        "seeds differ"
    } else if first.horizon_s != other.horizon_s {
        "horizon differs"
    } else if first.prices != other.prices {
        "prices differ"
    } else {
        return Ok(());
    };
    Err(HarnessError::Mismatch(format!("{}: {why}", dir.display())))
}

/// Compares the supervisor directories written by a run. All of them must
/// share scenario, seeds, horizon and prices.
pub fn compare(dirs: &[PathBuf]) -> Result<ComparisonReport, HarnessError> {
    let summaries: Vec<SupervisorSummary> = dirs.iter().map(|d| load_summary(&d.join("summary.json"))).collect::<Result<_, _>>()?;
    let first = summaries.first().ok_or_else(|| HarnessError::Mismatch("no runs given".into()))?;
    for (s, d) in summaries.iter().zip(dirs).skip(1) {
        check_compatible(first, s, d)?;
    }
    let runs: Vec<ComparedRun> = summaries
        .iter()
        .zip(dirs)
        .enumerate()
        .map(|(i, (s, d))| {
            let dup = summaries[..i].iter().filter(|p| p.supervisor == s.supervisor).count();
            ComparedRun {
                label: if dup == 0 { s.supervisor.to_string() } else { format!("{}#{}", s.supervisor, dup + 1) },
                dir: d.display().to_string(),
                supervisor: s.supervisor,
                mean_cumulative_pct_min: s.mean_cumulative_pct_min,
                mean_pct: s.mean_pct,
                mean_cumulative_profit: s.mean_cumulative_profit,
                mean_iteration_ms: s.timing.mean_ms,
                acting_iterations: s.timing.n_acting,
                du_quartiles: s.input_usage.quartiles,
                max_abs_du: s.input_usage.max_abs_du,
                infeasible_setpoints: s.infeasible_setpoints,
            }
        })
        .collect();
    let mut deltas = Vec::new();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            deltas.push(RunDelta {
                a: a.label.clone(),
                b: b.label.clone(),
                d_cumulative_pct_min: b.mean_cumulative_pct_min - a.mean_cumulative_pct_min,
                d_mean_pct: b.mean_pct - a.mean_pct,
                d_cumulative_profit: b.mean_cumulative_profit - a.mean_cumulative_profit,
                d_mean_iteration_ms: b.mean_iteration_ms - a.mean_iteration_ms,
            });
        }
    }
    let mut by_profit: Vec<&ComparedRun> = runs.iter().collect();
    by_profit.sort_by(|a, b| b.mean_cumulative_pct_min.total_cmp(&a.mean_cumulative_pct_min));
    let mut by_time: Vec<&ComparedRun> = runs.iter().filter(|r| r.supervisor != SupervisorKind::Fixed && r.acting_iterations > 0).collect();
    by_time.sort_by(|a, b| a.mean_iteration_ms.total_cmp(&b.mean_iteration_ms));
    Ok(ComparisonReport {
        seeds: first.seeds.clone(),
        horizon_s: first.horizon_s,
        profit_ordering: by_profit.iter().map(|r| r.label.clone()).collect(),
        timing_ordering: by_time.iter().map(|r| r.label.clone()).collect(),
        runs,
        deltas,
    })
}

/// Writes `comparison.json` plus plot-ready `input_usage.csv` (every
/// |Δu| per well) and `iteration_times.csv` (every execution).
pub fn write_comparison(report: &ComparisonReport, out: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(out.join("comparison.json"), text)?;

    let mut du = csv::Writer::from_path(out.join("input_usage.csv"))?;
    du.write_record(["label", "seed", "t", "well", "abs_du"])?;
    let mut tm = csv::Writer::from_path(out.join("iteration_times.csv"))?;
    tm.write_record(["label", "seed", "t", "acted", "t_total_ms"])?;
    for r in &report.runs {
        for &seed in &report.seeds {
            let dir = Path::new(&r.dir).join(format!("seed_{seed}"));
            let data = read_run_log(&dir.join("log.csv"))?;
            for w in data.decisions.windows(2) {
                for i in 0..3 {
                    let d = (w[1].u_applied[i] - w[0].u_applied[i]).abs();
                    du.write_record([r.label.clone(), seed.to_string(), format!("{:?}", w[1].t), (i + 1).to_string(), format!("{d:?}")])?;
                }
            }
            for row in read_timing(&dir.join("timing.csv"))? {
                tm.write_record([r.label.clone(), seed.to_string(), format!("{:?}", row.t), (row.acted as u8).to_string(), format!("{:?}", row.t_total_ms)])?;
            }
        }
    }
    du.flush()?;
    tm.flush()?;
    Ok(())
}
