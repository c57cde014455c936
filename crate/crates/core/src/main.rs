use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gaslift_rto::estimation::identifiability_mc;
use gaslift_rto::harness::{
    compare, oracle_report, run_experiment, step_test, write_comparison, ExperimentConfig, HarnessError,
};
use gaslift_rto::nlp::FitParameterSet;
use gaslift_rto::supervisors::SupervisorKind;

#[derive(Parser)]
#[command(name = "gaslift-rto", version, about = "Gas-lift network twin and real-time optimization experiments")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Restrict `run` to one supervisor (the fixed baseline always runs).
    #[arg(long, global = true)]
    supervisor: Option<SupervisorKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop runs against the fixed baseline.
    Run,
    /// Compare supervisor directories written by `run`.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Step response of one well and the suggested adaptation period.
    StepTest,
    /// Monte-Carlo identifiability study of the steady-state fit.
    Identifiability {
        /// Parameter set: theta_top or alpha_l.
        #[arg(long)]
        set: Option<String>,
    },
    /// Brute-force steady-state optimum versus the SQP solution.
    Oracle,
    /// Check a configuration file; `--print-default` writes the defaults.
    ValidateConfig {
        #[arg(long)]
        print_default: bool,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    if let Command::ValidateConfig { print_default: true } = cli.command {
        print!("{}", ExperimentConfig::default().to_toml_string());
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.experiment.seeds = vec![s];
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::ValidateConfig { .. } => {
            cfg.validate()?;
            println!("configuration ok");
        }
        Command::Run => {
            let kinds: Vec<SupervisorKind> = match cli.supervisor {
                Some(k) => vec![k],
                None => SupervisorKind::ALL.to_vec(),
            };
            std::fs::create_dir_all(out)?;
            let res = run_experiment(&cfg, &kinds, Some(out))?;
            for s in &res.summaries {
                println!(
                    "{:<6} cumulative {:+8.3} %·min  mean {:+6.3} %  acted {:6.1}  iteration {:8.3} ms",
                    s.supervisor, s.mean_cumulative_pct_min, s.mean_pct, s.mean_acted, s.timing.mean_ms
                );
            }
            if res.summaries.len() > 1 {
                let dirs: Vec<PathBuf> = res.summaries.iter().map(|s| out.join(s.supervisor.name())).collect();
                write_comparison(&compare(&dirs)?, out)?;
            }
            let failures = res.failures();
            if !failures.is_empty() {
                return Err(HarnessError::Runtime(failures.join("; ")));
            }
        }
        Command::Compare { dirs } => {
            let report = compare(&dirs)?;
            write_comparison(&report, out)?;
            println!("profit ordering: {}", report.profit_ordering.join(" > "));
            println!("timing ordering: {}", report.timing_ordering.join(" < "));
        }
        Command::StepTest => {
            let r = step_test(&cfg)?;
            std::fs::create_dir_all(out)?;
            write_json(&out.join("step_test.json"), &r)?;
            println!(
                "control {:.2} s, plant {:.2} s, recommended period {} s",
                r.control_response_s, r.plant_response_s, r.recommended_period_s
            );
        }
        Command::Identifiability { set } => {
            if let Some(s) = set {
                cfg.identifiability.fit.set = match s.as_str() {
                    "theta_top" => FitParameterSet::ThetaTop,
                    "alpha_l" => FitParameterSet::AlphaL,
                    other => return Err(HarnessError::Config(format!("--set: unknown parameter set '{other}'"))),
                };
            }
            let report = identifiability_mc(&cfg.rig(), &cfg.identifiability).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            std::fs::create_dir_all(out)?;
            report.write_json(&out.join("identifiability.json"))?;
            report.write_estimates_csv(&out.join("estimates.csv"))?;
            report.write_histograms_csv(&out.join("histograms.csv"), 20)?;
            println!(
                "{} runs, {} failed, {} bound hits, max |corr| {:.3}",
                report.n_runs, report.n_failed, report.bound_hits, report.max_abs_corr
            );
        }
        Command::Oracle => {
            let r = oracle_report(&cfg)?;
            std::fs::create_dir_all(out)?;
            write_json(&out.join("oracle.json"), &r)?;
            println!("grid {:?} J {:.4}; sqp {:?} J {:.4}", r.grid.q_g, r.grid.profit, r.sqp_q_g, r.sqp_profit);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
