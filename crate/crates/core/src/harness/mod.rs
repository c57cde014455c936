//! Experiment runner: configuration, closed-loop runs against the fixed
//! baseline, metrics, persisted logs and the step-response tuning utility.

mod compare;
mod config;
mod logio;
mod metrics;
mod oracle;
mod run;
mod step;

pub use compare::{compare, write_comparison, ComparisonReport, ComparedRun, RunDelta};
pub use config::{ExperimentConfig, ExperimentSection, OracleConfig, RigSection, StepTestConfig};
pub use logio::{read_run_log, read_timing, write_run_log, write_timing, DecisionRow, RunData, TimingRow, RUN_LOG_SCHEMA};
pub use metrics::{
    cumulative_integral, moving_average, percent_series, profit_series, quartiles, run_metrics, summarize, InputUsage,
    RunMetrics, SupervisorSummary, TimingStats, MOVING_AVERAGE_S, SUMMARY_SCHEMA,
};
pub use oracle::{oracle_report, OracleReport};
pub use run::{load_summary, recompute_summary, run_experiment, run_seed, write_profile, ExperimentOutput, SeedRun};
pub use step::{recommended_period, step_test, StepTestReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed log {path}: {message}")]
    Log { path: String, message: String },
    #[error("runs cannot be compared: {0}")]
    Mismatch(String),
    #[error("no settling: {0}")]
    NoSettling(String),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests;
