//! Versioned CSV files of a closed-loop run.
//!
//! `log.csv` holds the twin samples and, on sampling instants where the
//! supervisor executed, its decision. Wall times live in `timing.csv` so
//! that the log itself is reproducible byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use super::HarnessError;
use crate::supervisors::{SupervisorDecision, SupervisorKind};
use crate::twin::ExperimentLog;

/// Version of the run-log layout. Readers reject any other value.
pub const RUN_LOG_SCHEMA: u32 = 1;
const MAGIC: &str = "# gaslift-rto run log schema ";

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub t: f64,
    pub acted: bool,
    pub u_star: Option<[f64; 3]>,
    pub u_applied: [f64; 3],
    pub ss_flags: Option<Vec<bool>>,
    pub steady: Option<bool>,
    pub theta_hat: [f64; 6],
}

impl From<&SupervisorDecision> for DecisionRow {
    fn from(d: &SupervisorDecision) -> Self {
        Self {
            t: d.t,
            acted: d.acted,
            u_star: d.u_star,
            u_applied: d.u_applied,
            ss_flags: d.ss_flags.clone(),
            steady: d.steady,
            theta_hat: d.theta_hat.to_array(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub t: f64,
    pub acted: bool,
    pub t_adapt_ms: f64,
    pub t_opt_ms: f64,
    pub t_total_ms: f64,
}

impl From<&SupervisorDecision> for TimingRow {
    fn from(d: &SupervisorDecision) -> Self {
        Self { t: d.t, acted: d.acted, t_adapt_ms: d.t_adapt_ms, t_opt_ms: d.t_opt_ms, t_total_ms: d.t_total_ms }
    }
}

/// The parts of a run log that the metrics read.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub supervisor: SupervisorKind,
    pub seed: u64,
    pub t: Vec<f64>,
    /// Measured liquid rates, L/min.
    pub q_l: Vec<[f64; 3]>,
    /// Gas-lift setpoints in force, sL/min.
    pub q_g_sp: Vec<[f64; 3]>,
    pub decisions: Vec<DecisionRow>,
    pub failure: Option<String>,
}

impl RunData {
    pub fn from_live(supervisor: SupervisorKind, seed: u64, log: &ExperimentLog, decisions: &[SupervisorDecision]) -> Self {
        Self {
            supervisor,
            seed,
            t: log.samples.iter().map(|s| s.t).collect(),
            q_l: log.samples.iter().map(|s| s.measured.q_l).collect(),
            q_g_sp: log.samples.iter().map(|s| s.setpoint.q_g).collect(),
            // Only decisions that have a logged sample, as in the CSV.
            decisions: decisions.iter().filter(|d| log.samples.iter().any(|s| (d.t - s.t).abs() < 1e-9)).map(DecisionRow::from).collect(),
            failure: log.failure.as_ref().map(|e| one_line(&e.to_string())),
        }
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn decision_header() -> Vec<String> {
    let mut h = vec!["kind".to_string(), "acted".to_string()];
    for name in ["u_star", "u_applied"] {
        (1..=3).for_each(|i| h.push(format!("{name}_{i}")));
    }
    h.push("ss_flags".into());
    h.push("ss_flag".into());
    for name in ["theta_hat_res", "theta_hat_top"] {
        (1..=3).for_each(|i| h.push(format!("{name}_{i}")));
    }
    h
}

/// Full column list of `log.csv`.
pub fn run_log_header() -> Vec<String> {
    let mut h = ExperimentLog::sample_header();
    h.extend(decision_header());
    h
}

fn decision_cells(kind: SupervisorKind, d: Option<&SupervisorDecision>) -> Vec<String> {
    let Some(d) = d else {
        return vec![String::new(); decision_header().len()];
    };
    let b = |v: bool| if v { "1".to_string() } else { "0".to_string() };
    let mut r = vec![kind.name().to_string(), b(d.acted)];
    match d.u_star {
        Some(u) => r.extend(u.map(f)),
        None => r.extend(std::iter::repeat_n(String::new(), 3)),
    }
    r.extend(d.u_applied.map(f));
    r.push(d.ss_flags.as_ref().map(|v| v.iter().map(|&x| if x { '1' } else { '0' }).collect()).unwrap_or_default());
    r.push(d.steady.map(b).unwrap_or_default());
    r.extend(d.theta_hat.to_array().map(f));
    r
}

/// Writes `log.csv` for one run.
pub fn write_run_log(
    path: &Path,
    kind: SupervisorKind,
    seed: u64,
    log: &ExperimentLog,
    decisions: &[SupervisorDecision],
) -> Result<(), HarnessError> {
    let mut text = String::new();
    writeln!(text, "{MAGIC}{RUN_LOG_SCHEMA}").unwrap();
    writeln!(text, "# supervisor {kind} seed {seed}").unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(run_log_header())?;
    let mut next = decisions.iter().peekable();
    for s in &log.samples {
        let d = next.next_if(|d| (d.t - s.t).abs() < 1e-9);
        let mut row = log.sample_row(s);
        row.extend(decision_cells(kind, d));
        w.write_record(row)?;
    }
    text.push_str(&String::from_utf8(w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?).expect("ascii"));
    if let Some(e) = &log.failure {
        writeln!(text, "# failure: {}", one_line(&e.to_string())).unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_timing(path: &Path, decisions: &[SupervisorDecision]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "acted", "t_adapt_ms", "t_opt_ms", "t_total_ms"])?;
    for d in decisions {
        let r = TimingRow::from(d);
        w.write_record([f(r.t), (r.acted as u8).to_string(), f(r.t_adapt_ms), f(r.t_opt_ms), f(r.t_total_ms)])?;
    }
    w.flush()?;
    Ok(())
}

struct Cols {
    header: Vec<String>,
}

impl Cols {
    fn idx(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).expect("header was checked")
    }
}

/// Reads a `log.csv` back into the form the metrics use.
pub fn read_run_log(path: &Path) -> Result<RunData, HarnessError> {
    let bad = |m: String| HarnessError::Log { path: path.display().to_string(), message: m };
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let version = lines
        .next()
        .and_then(|l| l.strip_prefix(MAGIC))
        .ok_or_else(|| bad("missing schema line".into()))?;
    if version.trim() != RUN_LOG_SCHEMA.to_string() {
        return Err(bad(format!("unsupported schema version '{}'", version.trim())));
    }
    let meta: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    let (supervisor, seed) = match meta.as_slice() {
        ["#", "supervisor", k, "seed", s] => (
            k.parse::<SupervisorKind>().map_err(bad)?,
            s.parse::<u64>().map_err(|e| bad(format!("seed: {e}")))?,
        ),
        _ => return Err(bad("missing supervisor/seed line".into())),
    };
    let mut failure = None;
    let mut body = String::new();
    for l in lines {
        if let Some(m) = l.strip_prefix("# failure: ") {
            failure = Some(m.to_string());
        } else if !l.starts_with('#') {
            body.push_str(l);
            body.push('\n');
        }
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != run_log_header() {
        return Err(bad("column layout does not match the schema".into()));
    }
    let c = Cols { header };
    let num = |rec: &csv::StringRecord, i: usize, line: usize| -> Result<f64, HarnessError> {
        rec[i].parse::<f64>().map_err(|e| bad(format!("row {line}, column {}: {e}", c.header[i])))
    };
    let well = |name: &str| [1, 2, 3].map(|i| c.idx(&format!("{name}_{i}")));
    let (i_t, i_ql, i_sp) = (c.idx("t"), well("q_l_lpm"), well("q_g_sp"));
    let (i_kind, i_acted, i_us, i_ua) = (c.idx("kind"), c.idx("acted"), well("u_star"), well("u_applied"));
    let (i_flags, i_flag) = (c.idx("ss_flags"), c.idx("ss_flag"));
    let i_th: Vec<usize> = well("theta_hat_res").into_iter().chain(well("theta_hat_top")).collect();

    let mut data = RunData { supervisor, seed, t: vec![], q_l: vec![], q_g_sp: vec![], decisions: vec![], failure };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let arr = |idx: [usize; 3]| -> Result<[f64; 3], HarnessError> {
            Ok([num(&rec, idx[0], line)?, num(&rec, idx[1], line)?, num(&rec, idx[2], line)?])
        };
        let t = num(&rec, i_t, line)?;
        data.t.push(t);
        data.q_l.push(arr(i_ql)?);
        data.q_g_sp.push(arr(i_sp)?);
        if rec[i_kind].is_empty() {
            continue;
        }
        let flag = |s: &str| match s {
            "1" => Ok(true),
            "0" => Ok(false),
            o => Err(bad(format!("row {line}: bad flag '{o}'"))),
        };
        let mut theta_hat = [0.0; 6];
        for (k, &i) in i_th.iter().enumerate() {
            theta_hat[k] = num(&rec, i, line)?;
        }
        data.decisions.push(DecisionRow {
            t,
            acted: flag(&rec[i_acted])?,
            u_star: if rec[i_us[0]].is_empty() { None } else { Some(arr(i_us)?) },
            u_applied: arr(i_ua)?,
            ss_flags: if rec[i_flags].is_empty() {
                None
            } else {
                Some(rec[i_flags].chars().map(|ch| flag(&ch.to_string())).collect::<Result<_, _>>()?)
            },
            steady: if rec[i_flag].is_empty() { None } else { Some(flag(&rec[i_flag])?) },
            theta_hat,
        });
    }
    Ok(data)
}

pub fn read_timing(path: &Path) -> Result<Vec<TimingRow>, HarnessError> {
    let bad = |m: String| HarnessError::Log { path: path.display().to_string(), message: m };
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(bad("expected 5 columns".into()));
        }
        let n = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(e.to_string()));
        out.push(TimingRow { t: n(0)?, acted: &rec[1] == "1", t_adapt_ms: n(2)?, t_opt_ms: n(3)?, t_total_ms: n(4)? });
    }
    Ok(out)
}
