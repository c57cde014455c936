use super::*;
use crate::twin::{default_depletion_profile, run_scenario, DisturbanceProfile, ExperimentLog, NoiseStd, SimConfig, Twin};

fn run(kind: SupervisorKind, sim: SimConfig, profile: DisturbanceProfile, u0: ControlInputs, horizon: f64, cfg: SupervisorConfig) -> (ExperimentLog, Vec<SupervisorDecision>) {
    let rig = Rig::default();
    let mut twin = Twin::new(rig, sim, profile, ThetaVector::default(), u0).unwrap();
    let mut sup = RtoSupervisor::new(rig, SupervisorConfig { kind, ..cfg }, 1.0).unwrap();
    let log = run_scenario(&mut twin, &mut sup, horizon);
    (log, sup.into_decisions())
}

fn depletion(kind: SupervisorKind) -> (ExperimentLog, Vec<SupervisorDecision>) {
    let sim = SimConfig { rng_seed: 7, ..SimConfig::default() };
    run(kind, sim, default_depletion_profile(), ControlInputs::uniform(2.5), 1200.0, SupervisorConfig::default())
}

fn quiet_flat() -> (SimConfig, DisturbanceProfile) {
    (SimConfig { noise_std: NoiseStd::ZERO, ..SimConfig::default() }, DisturbanceProfile::constant([0.8, 0.6, 0.8], 0.3).unwrap())
}

fn econ_optimum(theta: &ThetaVector) -> [f64; 3] {
    let rig = Rig::default();
    let dist = DisturbanceState::new([0.8, 0.6, 0.8], 0.3, rig.consts.p_atm);
    let p = build_ss_econ(&rig, theta, &dist, &EconWeights::default(), &SsEconConstraints::default(), &ControlInputs::uniform(2.5), &NetworkState::nominal());
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Converged);
    SsEconSolution::decode(&r.x, r.objective).q_g
}

fn assert_safe(d: &[SupervisorDecision]) {
    let c = SsEconConstraints::default();
    for x in d {
        assert!(c.is_feasible(&x.u_applied, 1e-8), "t = {}: {:?}", x.t, x.u_applied);
    }
}

#[test]
fn filter_applies_the_gain() {
    let c = SsEconConstraints::default();
    let u = filter_and_project(&[2.5, 2.5, 2.5], &[5.0, 1.0, 1.0], 0.4, &c);
    assert!((u[0] - 3.5).abs() < 1e-12 && (u[1] - 1.9).abs() < 1e-12);
    let at = [2.4, 1.1, 4.0];
    assert_eq!(filter_and_project(&at, &at, 0.4, &c), at);
}

#[test]
fn filter_contracts_at_rate_one_minus_gain() {
    let c = SsEconConstraints::default();
    let target = [2.0, 1.5, 3.9];
    let mut u: [f64; 3] = [4.0, 2.0, 1.5];
    let mut gap = (0..3).map(|i| (u[i] - target[i]).abs()).fold(0.0, f64::max);
    for _ in 0..20 {
        u = filter_and_project(&u, &target, 0.4, &c);
        let g = (0..3).map(|i| (u[i] - target[i]).abs()).fold(0.0, f64::max);
        assert!((g - 0.6 * gap).abs() < 1e-12 * gap.max(1.0));
        gap = g;
    }
}

#[test]
fn filter_then_project_keeps_availability() {
    let c = SsEconConstraints::default();
    let u = filter_and_project(&[2.5, 2.5, 2.5], &[5.0, 5.0, 2.5], 0.4, &c);
    assert!(c.is_feasible(&u, 1e-12) && (u.iter().sum::<f64>() - 7.5).abs() < 1e-12);
}

#[test]
fn fixed_baseline_holds_the_uniform_split() {
    let (log, d) = depletion(SupervisorKind::Fixed);
    assert!(log.failure.is_none());
    assert_eq!(d.len(), 120);
    assert!(d.iter().all(|x| x.acted && x.u_applied == [2.5; 3]));
    assert!(log.samples.iter().all(|s| s.setpoint.q_g == [2.5; 3]));
}

#[test]
fn ropa_acts_every_period_and_tracks_depletion() {
    let (log, d) = depletion(SupervisorKind::Ropa);
    assert!(log.failure.is_none(), "{:?}", log.failure);
    assert_eq!(d.len(), 120);
    assert!(d.iter().all(|x| x.acted), "{:?}", d.iter().find(|x| !x.acted));
    assert_safe(&d);
    // The valve of well 1 halves over minutes 4-12; its coefficient
    // estimate follows.
    let at = |t: f64| d.iter().find(|x| (x.t - t).abs() < 1e-9).unwrap().theta_hat.res[0];
    let ratio = at(1190.0) / at(230.0);
    assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
}

#[test]
fn ssrto_waits_for_steady_windows() {
    let (log, d) = depletion(SupervisorKind::Ssrto);
    assert!(log.failure.is_none());
    assert_safe(&d);
    for w in d.windows(2) {
        if !w[1].acted {
            assert_eq!(w[1].u_applied, w[0].u_applied);
        }
    }
    assert!(d.iter().filter(|x| x.t < 39.0).all(|x| !x.acted));
    let acts = d.iter().filter(|x| x.acted).count();
    // Both ramps run back to back from minute 4 to 18.
    let during = d.iter().filter(|x| x.acted && x.t >= 300.0 && x.t <= 1080.0).count();
    assert!(acts < 60, "{acts}");
    assert!(during <= 3, "{during} executions during the ramps");
    for x in d.iter().filter(|x| x.acted) {
        assert_eq!(x.steady, Some(true));
    }
}

#[test]
fn ropa_and_ssrto_solve_the_same_problem_on_static_truth() {
    let (sim, profile) = quiet_flat();
    let target = econ_optimum(&ThetaVector::default());
    let (_, ropa) = run(SupervisorKind::Ropa, sim, profile.clone(), ControlInputs::uniform(2.5), 10.0, SupervisorConfig::default());
    let (_, ssrto) = run(SupervisorKind::Ssrto, sim, profile, ControlInputs::uniform(2.5), 50.0, SupervisorConfig::default());
    let a = ropa[0].u_star.unwrap();
    let first = ssrto.iter().find(|x| x.acted).expect("SSRTO acts on steady data");
    assert!((first.t - 40.0).abs() < 1e-9);
    let b = first.u_star.unwrap();
    for i in 0..3 {
        assert!((a[i] - target[i]).abs() < 1e-5 && (b[i] - target[i]).abs() < 1e-5, "{a:?} {b:?} {target:?}");
    }
}

#[test]
fn drto_first_move_stays_put_at_the_optimum() {
    let (sim, profile) = quiet_flat();
    let opt = econ_optimum(&ThetaVector::default());
    let cfg = SupervisorConfig { fixed_u: opt, ..SupervisorConfig::default() };
    let (_, d) = run(SupervisorKind::Drto, sim, profile, ControlInputs { q_g: opt }, 10.0, cfg);
    let u = d[0].u_applied;
    for i in 0..3 {
        assert!((u[i] - opt[i]).abs() < 0.05, "{u:?} vs {opt:?}");
    }
}

#[test]
fn drto_respects_move_limits_on_depletion() {
    let (log, d) = depletion(SupervisorKind::Drto);
    assert!(log.failure.is_none());
    assert_safe(&d);
    let mut prev = [2.5; 3];
    for x in &d {
        for i in 0..3 {
            assert!((x.u_applied[i] - prev[i]).abs() <= 2.0 + 1e-9);
        }
        prev = x.u_applied;
    }
    let acted = d.iter().filter(|x| x.acted).count();
    assert!(acted >= 115, "{acted}");
}

#[test]
fn failed_optimization_holds_the_inputs() {
    let (sim, profile) = quiet_flat();
    let cfg = SupervisorConfig { solver: SolverConfig { max_iter: 1, ..SolverConfig::default() }, ..SupervisorConfig::default() };
    for kind in [SupervisorKind::Ropa, SupervisorKind::Drto] {
        let (log, d) = run(kind, sim, profile.clone(), ControlInputs::uniform(2.5), 20.0, cfg.clone());
        assert!(log.failure.is_none());
        for x in &d {
            assert!(!x.acted && x.u_applied == [2.5; 3] && !x.note.is_empty(), "{kind}: {x:?}");
        }
    }
}

#[test]
fn timing_parts_add_up() {
    for kind in [SupervisorKind::Ropa, SupervisorKind::Ssrto, SupervisorKind::Drto] {
        let sim = SimConfig { rng_seed: 3, ..SimConfig::default() };
        let (_, d) = run(kind, sim, default_depletion_profile(), ControlInputs::uniform(2.5), 300.0, SupervisorConfig::default());
        for x in d.iter().filter(|x| x.acted) {
            let parts = x.t_adapt_ms + x.t_opt_ms;
            assert!(parts <= x.t_total_ms * 1.05 + 0.02 && parts >= x.t_total_ms * 0.95 - 0.02, "{kind} t = {}: {x:?}", x.t);
        }
    }
}

#[test]
fn config_checks() {
    let c = SupervisorConfig::default();
    assert!(c.validate(1.0).is_ok());
    assert!(SupervisorConfig { k_u: 0.0, ..c.clone() }.validate(1.0).is_err());
    assert!(SupervisorConfig { period_s: 2.5, ..c.clone() }.validate(1.0).is_err());
    assert!(SupervisorConfig { fixed_u: [3.0; 3], ..c }.validate(1.0).is_err());
    assert_eq!("DRTO".parse::<SupervisorKind>(), Ok(SupervisorKind::Drto));
    assert!("mpc".parse::<SupervisorKind>().is_err());
}
