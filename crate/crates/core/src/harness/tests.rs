use std::path::PathBuf;

use super::*;
use crate::supervisors::SupervisorKind;
use crate::twin::TwinError;

fn short(seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.horizon_s = 120.0;
    cfg.experiment.seeds = seeds;
    cfg
}

#[test]
fn moving_average_uses_partial_windows_at_the_edges() {
    let t: Vec<f64> = (0..=10).map(f64::from).collect();
    let ma = moving_average(&t, &t, 4.0);
    assert_eq!(ma[0], 1.0); // mean of 0, 1, 2
    assert_eq!(ma[1], 1.5); // mean of 0..=3
    assert_eq!(ma[5], 5.0);
    assert_eq!(ma[10], 9.0);
    let flat = moving_average(&t, &[3.0; 11], MOVING_AVERAGE_S);
    assert!(flat.iter().all(|&v| v == 3.0));
}

#[test]
fn trapezoid_and_quartiles() {
    let t: Vec<f64> = (0..=120).map(f64::from).collect();
    let y: Vec<f64> = t.iter().map(|x| 2.0 * x).collect();
    let c = cumulative_integral(&t, &y, 60.0);
    assert!((c[120] - 120.0 * 120.0 / 60.0).abs() < 1e-9);
    assert_eq!(quartiles(&[5.0, 1.0, 3.0, 2.0, 4.0]), Some([1.0, 2.0, 3.0, 4.0, 5.0]));
    assert_eq!(quartiles(&[1.0, 2.0]).unwrap()[2], 1.5);
    assert_eq!(quartiles(&[]), None);
}

#[test]
fn recommended_period_rule() {
    assert_eq!(recommended_period(20.0, 4.0), 8.0);
    assert_eq!(recommended_period(24.0, 4.0), 10.0);
    assert_eq!(recommended_period(4.5, 4.0), 1.0);
}

#[test]
fn fixed_against_itself_is_zero_everywhere() {
    let out = run_experiment(&short(vec![3]), &[SupervisorKind::Fixed], None).unwrap();
    let s = out.summary(SupervisorKind::Fixed).unwrap();
    assert_eq!(s.mean_cumulative_pct_min, 0.0);
    assert_eq!(s.per_seed[0].final_pct_ma, 0.0);
    let d = out.runs[0].data();
    let j = profit_series(&d.q_l, &s.prices);
    assert!(percent_series(&j, &j).iter().all(|&p| p == 0.0));
}

#[test]
fn logs_round_trip_and_summaries_recompute_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&short(vec![1, 2]), &[SupervisorKind::Ropa], Some(dir.path())).unwrap();
    for r in out.runs.iter() {
        let path = dir.path().join(r.kind.name()).join(format!("seed_{}", r.seed));
        assert_eq!(read_run_log(&path.join("log.csv")).unwrap(), r.data());
        assert_eq!(read_timing(&path.join("timing.csv")).unwrap(), r.timing());
    }
    for kind in ["ropa", "fixed"] {
        let kdir = dir.path().join(kind);
        let text = std::fs::read_to_string(kdir.join("summary.json")).unwrap();
        let again = recompute_summary(&kdir).unwrap();
        let mut t2 = serde_json::to_string_pretty(&again).unwrap();
        t2.push('\n');
        assert_eq!(text, t2);
        assert_eq!(load_summary(&kdir.join("summary.json")).unwrap(), again);
    }
    assert!(dir.path().join("ropa/profile.csv").exists());
}

#[test]
fn loader_rejects_unknown_versions_and_layouts() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&short(vec![1]), &[SupervisorKind::Fixed], Some(dir.path())).unwrap();
    let log = dir.path().join("fixed/seed_1/log.csv");
    let text = std::fs::read_to_string(&log).unwrap();
    let v2 = dir.path().join("v2.csv");
    std::fs::write(&v2, text.replacen("schema 1", "schema 2", 1)).unwrap();
    assert!(matches!(read_run_log(&v2), Err(HarnessError::Log { .. })));
    std::fs::write(&v2, text.replacen("q_l_lpm_1", "q_liquid_1", 1)).unwrap();
    assert!(matches!(read_run_log(&v2), Err(HarnessError::Log { .. })));
    let summary = dir.path().join("fixed/summary.json");
    let s = std::fs::read_to_string(&summary).unwrap();
    std::fs::write(&summary, s.replacen("\"schema_version\": 1", "\"schema_version\": 7", 1)).unwrap();
    assert!(load_summary(&summary).is_err());
}

#[test]
fn partial_logs_keep_the_failure() {
    let cfg = short(vec![1]);
    let mut run = run_seed(&cfg, SupervisorKind::Fixed, 1).unwrap();
    run.log.samples.truncate(30);
    run.log.failure = Some(TwinError::Controller { t: 29.0, message: "solver\nbroke".into() });
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.csv");
    write_run_log(&p, run.kind, 1, &run.log, &run.decisions).unwrap();
    let back = read_run_log(&p).unwrap();
    assert_eq!(back.t.len(), 30);
    assert_eq!(back.decisions.len(), 3);
    assert_eq!(back.failure.as_deref(), Some("supervisor failed at t = 29.00 s: solver broke"));
    assert_eq!(back, RunData::from_live(run.kind, 1, &run.log, &run.decisions));
}

#[test]
fn same_seed_gives_identical_log_bytes() {
    let cfg = short(vec![5]);
    let write = |run: &SeedRun| {
        let mut v = Vec::new();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        write_run_log(&p, run.kind, run.seed, &run.log, &run.decisions).unwrap();
        v.extend(std::fs::read(p).unwrap());
        v
    };
    for kind in [SupervisorKind::Ssrto, SupervisorKind::Drto] {
        let a = write(&run_seed(&cfg, kind, 5).unwrap());
        let b = write(&run_seed(&cfg, kind, 5).unwrap());
        assert!(a == b, "{kind} log differs between repeats");
    }
    let c = write(&run_seed(&cfg, SupervisorKind::Ssrto, 6).unwrap());
    assert!(c != write(&run_seed(&cfg, SupervisorKind::Ssrto, 5).unwrap()));
}

#[test]
fn compare_self_is_zero_and_mismatches_are_rejected() {
    let a = tempfile::tempdir().unwrap();
    run_experiment(&short(vec![1]), &[SupervisorKind::Ropa], Some(a.path())).unwrap();
    let ropa = a.path().join("ropa");
    let rep = compare(&[ropa.clone(), ropa.clone()]).unwrap();
    assert_eq!(rep.deltas.len(), 1);
    let d = &rep.deltas[0];
    assert_eq!((d.d_cumulative_pct_min, d.d_mean_pct, d.d_cumulative_profit, d.d_mean_iteration_ms), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(rep.runs[1].label, "ropa#2");
    let out = tempfile::tempdir().unwrap();
    write_comparison(&rep, out.path()).unwrap();
    for f in ["comparison.json", "input_usage.csv", "iteration_times.csv"] {
        assert!(out.path().join(f).exists());
    }

    let b = tempfile::tempdir().unwrap();
    run_experiment(&short(vec![2]), &[SupervisorKind::Fixed], Some(b.path())).unwrap();
    let r = compare(&[ropa.clone(), b.path().join("fixed")]);
    assert!(matches!(r, Err(HarnessError::Mismatch(_))), "{r:?}");

    let mut other = short(vec![1]);
    other.scenario = crate::twin::DisturbanceProfile::constant([0.8, 0.6, 0.8], 0.3).unwrap();
    let c = tempfile::tempdir().unwrap();
    run_experiment(&other, &[SupervisorKind::Fixed], Some(c.path())).unwrap();
    assert!(matches!(compare(&[ropa, c.path().join("fixed")]), Err(HarnessError::Mismatch(_))));
}

#[test]
fn averaging_seeds_smooths_the_profile() {
    let out = run_experiment(&short(vec![1, 2]), &[SupervisorKind::Fixed], None).unwrap();
    let series: Vec<Vec<f64>> = out.runs.iter().map(|r| r.data().q_l.iter().map(|q| q[0]).collect()).collect();
    let avg: Vec<f64> = (0..series[0].len()).map(|k| 0.5 * (series[0][k] + series[1][k])).collect();
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    assert!(var(&avg) < var(&series[0]).min(var(&series[1])));
}

#[test]
fn step_test_matches_the_loop_and_plant_times() {
    let r = step_test(&ExperimentConfig::default()).unwrap();
    assert!((r.control_response_s - 4.0).abs() < 0.5, "{}", r.control_response_s);
    assert!(r.plant_response_s > 10.0 && r.plant_response_s < 30.0, "{}", r.plant_response_s);
    assert!(r.recommended_period_s >= 5.0 && r.recommended_period_s <= 15.0);
    assert!((r.control_change - 1.0).abs() < 1e-6);
    assert!(r.plant_change > 0.0);

    let mut cfg = ExperimentConfig::default();
    cfg.step_test.magnitude = 0.0;
    assert!(matches!(step_test(&cfg), Err(HarnessError::NoSettling(_))));
    cfg.step_test.magnitude = 1.0;
    cfg.step_test.horizon_s = 15.0;
    assert!(matches!(step_test(&cfg), Err(HarnessError::NoSettling(_))));
    cfg.step_test.magnitude = 9.0;
    assert!(matches!(step_test(&cfg), Err(HarnessError::Config(_))));
}

#[test]
fn config_round_trips_and_names_bad_fields() {
    let d = ExperimentConfig::default();
    let text = d.to_toml_string();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), d);
    for key in ["period_s = 10.0", "k_u = 0.4", "window_s = 40.0", "alpha = 0.9", "du_max = 2.0", "r_weight = 0.01", "q_total_max = 7.5"] {
        assert!(text.contains(key), "missing {key}");
    }
    let err = ExperimentConfig::from_toml_str("[experiment]\nhorizon = 5\n").unwrap_err().to_string();
    assert!(err.contains("horizon"), "{err}");
    let err = ExperimentConfig::from_toml_str("[experiment]\nseeds = []\n").unwrap_err().to_string();
    assert!(err.contains("experiment.seeds"), "{err}");
    let err = ExperimentConfig::from_toml_str("[experiment]\nhorizon_s = 30.0\n").unwrap_err().to_string();
    assert!(err.contains("experiment.horizon_s"), "{err}");
    let err = ExperimentConfig::from_toml_str("[supervisor.constraints]\nq_min = 1.0\nq_max = 5.0\nq_total_max = 2.0\nguard = 100.0\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(ExperimentConfig::load(&PathBuf::from("/nonexistent/cfg.toml")).is_err());
}
