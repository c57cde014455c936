use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::logio::{read_run_log, read_timing, write_run_log, write_timing, RunData, TimingRow};
use super::metrics::{cumulative_integral, moving_average, percent_series, profit_series, summarize, SupervisorSummary, MOVING_AVERAGE_S, SUMMARY_SCHEMA};
use super::HarnessError;
use crate::model::ControlInputs;
use crate::supervisors::{RtoSupervisor, SupervisorConfig, SupervisorDecision, SupervisorKind};
use crate::twin::{run_scenario, ExperimentLog, SimConfig, Twin};

/// One closed-loop run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub kind: SupervisorKind,
    pub seed: u64,
    pub log: ExperimentLog,
    pub decisions: Vec<SupervisorDecision>,
    pub ekf_failures: usize,
}

impl SeedRun {
    pub fn data(&self) -> RunData {
        RunData::from_live(self.kind, self.seed, &self.log, &self.decisions)
    }

    pub fn timing(&self) -> Vec<TimingRow> {
        self.decisions.iter().map(TimingRow::from).collect()
    }
}

/// Runs `kind` on the configured scenario with the twin noise seeded by
/// `seed`. The twin starts at the steady state of the baseline setpoints.
pub fn run_seed(cfg: &ExperimentConfig, kind: SupervisorKind, seed: u64) -> Result<SeedRun, HarnessError> {
    let rig = cfg.rig();
    let sim = SimConfig { rng_seed: seed, ..cfg.sim };
    let u0 = ControlInputs { q_g: cfg.supervisor.fixed_u };
    let mut twin = Twin::new(rig, sim, cfg.scenario.clone(), cfg.theta_true, u0).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let sup_cfg = SupervisorConfig { kind, ..cfg.supervisor.clone() };
    let mut sup = RtoSupervisor::new(rig, sup_cfg, sim.sensor_period).map_err(|m| HarnessError::Config(format!("supervisor: {m}")))?;
    let log = run_scenario(&mut twin, &mut sup, cfg.experiment.horizon_s);
    let ekf_failures = sup.ekf_failures();
    Ok(SeedRun { kind, seed, log, decisions: sup.into_decisions(), ekf_failures })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summaries: Vec<SupervisorSummary>,
    /// Every run, including the baseline.
    pub runs: Vec<SeedRun>,
}

impl ExperimentOutput {
    pub fn summary(&self, kind: SupervisorKind) -> Option<&SupervisorSummary> {
        self.summaries.iter().find(|s| s.supervisor == kind)
    }

    /// Messages of the runs that ended early.
    pub fn failures(&self) -> Vec<String> {
        self.runs
            .iter()
            .filter_map(|r| r.log.failure.as_ref().map(|e| format!("{} seed {}: {e}", r.kind, r.seed)))
            .collect()
    }
}

fn seed_dir(root: &Path, kind: SupervisorKind, seed: u64) -> PathBuf {
    root.join(kind.name()).join(format!("seed_{seed}"))
}

fn baseline_dir(kind: SupervisorKind) -> &'static str {
    if kind == SupervisorKind::Fixed {
        "."
    } else {
        "../fixed"
    }
}

/// Runs every requested supervisor and the fixed baseline for all seeds.
///
/// With `out`, writes `<out>/<kind>/seed_<s>/{log.csv,timing.csv}` and
/// `<out>/<kind>/{summary.json,profile.csv}`. Runs that end early keep
/// their partial logs.
pub fn run_experiment(cfg: &ExperimentConfig, kinds: &[SupervisorKind], out: Option<&Path>) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let mut all: Vec<SupervisorKind> = vec![SupervisorKind::Fixed];
    all.extend(kinds.iter().copied().filter(|k| *k != SupervisorKind::Fixed));
    let jobs: Vec<(SupervisorKind, u64)> =
        all.iter().flat_map(|&k| cfg.experiment.seeds.iter().map(move |&s| (k, s))).collect();
    let runs: Vec<SeedRun> = if cfg.experiment.parallel {
        jobs.par_iter().map(|&(k, s)| run_seed(cfg, k, s)).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(|&(k, s)| run_seed(cfg, k, s)).collect::<Result<_, _>>()?
    };
    for r in &runs {
        log::info!("{} seed {}: {} samples, {} decisions", r.kind, r.seed, r.log.samples.len(), r.decisions.len());
    }

    if let Some(root) = out {
        for r in &runs {
            let dir = seed_dir(root, r.kind, r.seed);
            std::fs::create_dir_all(&dir)?;
            write_run_log(&dir.join("log.csv"), r.kind, r.seed, &r.log, &r.decisions)?;
            write_timing(&dir.join("timing.csv"), &r.decisions)?;
        }
    }

    let reported: Vec<SupervisorKind> = all.iter().copied().filter(|k| kinds.contains(k) || *k == SupervisorKind::Fixed).collect();
    let mut summaries = Vec::new();
    for &kind in &reported {
        let triples: Vec<(RunData, RunData, Vec<TimingRow>)> = cfg
            .experiment
            .seeds
            .iter()
            .map(|&s| {
                let find = |k: SupervisorKind| runs.iter().find(|r| r.kind == k && r.seed == s).expect("every job ran");
                let r = find(kind);
                (r.data(), find(SupervisorKind::Fixed).data(), r.timing())
            })
            .collect();
        let summary = summarize(
            kind,
            cfg.experiment.horizon_s,
            &cfg.supervisor.econ,
            &cfg.scenario,
            baseline_dir(kind),
            &triples,
            &cfg.supervisor.constraints,
        );
        if let Some(root) = out {
            let dir = root.join(kind.name());
            std::fs::write(dir.join("summary.json"), summary_text(&summary))?;
            write_profile(&dir.join("profile.csv"), &triples, &cfg.supervisor.econ)?;
        }
        summaries.push(summary);
    }
    Ok(ExperimentOutput { summaries, runs })
}

pub(crate) fn summary_text(s: &SupervisorSummary) -> String {
    let mut t = serde_json::to_string_pretty(s).expect("summary serializes");
    t.push('\n');
    t
}

/// Seed-averaged profiles: profit, percent difference with its moving
/// average and cumulative integral, setpoints and liquid rates.
pub fn write_profile(path: &Path, runs: &[(RunData, RunData, Vec<TimingRow>)], prices: &crate::nlp::EconWeights) -> Result<(), HarnessError> {
    let n = runs.iter().map(|(r, b, _)| r.t.len().min(b.t.len())).min().unwrap_or(0);
    let m = runs.len().max(1) as f64;
    let Some((first, _, _)) = runs.first() else {
        return Ok(());
    };
    let t = &first.t[..n];
    let mean = |f: &dyn Fn(&RunData, &RunData) -> Vec<f64>| -> Vec<f64> {
        let mut acc = vec![0.0; n];
        for (r, b, _) in runs {
            for (a, v) in acc.iter_mut().zip(f(r, b)) {
                *a += v / m;
            }
        }
        acc
    };
    let j = mean(&|r, _| profit_series(&r.q_l[..n], prices));
    let j_fix = mean(&|_, b| profit_series(&b.q_l[..n], prices));
    let pct = mean(&|r, b| percent_series(&profit_series(&r.q_l[..n], prices), &profit_series(&b.q_l[..n], prices)));
    let ma = moving_average(t, &pct, MOVING_AVERAGE_S);
    let cum = cumulative_integral(t, &pct, 60.0);
    let sp: Vec<Vec<f64>> = (0..3).map(|i| mean(&|r, _| r.q_g_sp[..n].iter().map(|u| u[i]).collect())).collect();
    let ql: Vec<Vec<f64>> = (0..3).map(|i| mean(&|r, _| r.q_l[..n].iter().map(|u| u[i]).collect())).collect();

    let mut w = csv::Writer::from_path(path)?;
    let mut h: Vec<String> = ["t", "j_mean", "j_fixed_mean", "pct_mean", "pct_ma60", "cum_pct_min"].map(String::from).to_vec();
    (1..=3).for_each(|i| h.push(format!("q_g_sp_mean_{i}")));
    (1..=3).for_each(|i| h.push(format!("q_l_mean_{i}")));
    w.write_record(&h)?;
    for k in 0..n {
        let mut row = vec![t[k], j[k], j_fix[k], pct[k], ma[k], cum[k]];
        row.extend(sp.iter().map(|s| s[k]));
        row.extend(ql.iter().map(|s| s[k]));
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_summary(path: &Path) -> Result<SupervisorSummary, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let version = v.get("schema_version").and_then(|x| x.as_u64());
    if version != Some(SUMMARY_SCHEMA as u64) {
        return Err(HarnessError::Log { path: path.display().to_string(), message: format!("unsupported summary schema {version:?}") });
    }
    Ok(serde_json::from_value(v)?)
}

/// Recomputes a supervisor summary from the persisted logs next to it.
/// Metadata (prices, constraints, scenario, seeds) is taken from the
/// existing `summary.json`.
pub fn recompute_summary(kind_dir: &Path) -> Result<SupervisorSummary, HarnessError> {
    let meta = load_summary(&kind_dir.join("summary.json"))?;
    let base = kind_dir.join(&meta.baseline_dir);
    let mut triples = Vec::new();
    for &s in &meta.seeds {
        let seed = format!("seed_{s}");
        let run = read_run_log(&kind_dir.join(&seed).join("log.csv"))?;
        let baseline = read_run_log(&base.join(&seed).join("log.csv"))?;
        let timing = read_timing(&kind_dir.join(&seed).join("timing.csv"))?;
        triples.push((run, baseline, timing));
    }
    Ok(summarize(meta.supervisor, meta.horizon_s, &meta.prices, &meta.scenario, &meta.baseline_dir, &triples, &meta.constraints))
}
