use super::*;
use crate::integrate::rk4_span;
use crate::model::{ControlInputs, DisturbanceState, NetworkState, Rig, ThetaVector};
use crate::nlp::FitParameterSet;
use crate::twin::{DisturbanceProfile, NoiseStd, SimConfig, Twin};

fn dist0(rig: &Rig) -> DisturbanceState {
    DisturbanceState::new([0.8, 0.6, 0.8], 0.3, rig.consts.p_atm)
}

fn steady(rig: &Rig, theta: &ThetaVector, u: &ControlInputs) -> NetworkState {
    rig.steady_state_solve(u, &dist0(rig), theta, &NetworkState::nominal()).unwrap()
}

fn filter_at_nominal(rig: &Rig, cfg: EkfConfig) -> Ekf {
    let theta = ThetaVector::default();
    let x = steady(rig, &theta, &ControlInputs::uniform(2.5));
    Ekf::new(*rig, cfg, ExtendedState { x, theta }, 0.0).unwrap()
}

#[test]
fn random_walk_keeps_theta_and_adds_q() {
    let rig = Rig::default();
    let mut f = filter_at_nominal(&rig, EkfConfig::default());
    // Move off the steady state so the state block changes too.
    let before = f.covariance();
    let theta = f.estimate().theta;
    f.predict(&ControlInputs::uniform(3.5), &dist0(&rig)).unwrap();
    assert_eq!(f.estimate().theta, theta);
    let after = f.covariance();
    let q = f.config().q_theta_diag;
    for i in 6..12 {
        for j in 6..12 {
            let add = if i == j { q[i - 6] } else { 0.0 };
            let expect = before[(i, j)] + add;
            assert!((after[(i, j)] - expect).abs() <= 1e-12 * expect.abs().max(q[0]), "({i},{j})");
        }
    }
}

#[test]
fn linearization_matches_finite_differences_of_the_step() {
    let rig = Rig::default();
    let theta = ThetaVector { res: [6.0e-5, 6.6e-5, 6.2e-5], top: [8.0e-5, 8.4e-5, 7.9e-5] };
    let mut x = steady(&rig, &theta, &ControlInputs::uniform(2.5));
    x.m_g[1] *= 1.05;
    x.m_l[2] *= 0.995;
    let f = Ekf::new(rig, EkfConfig::default(), ExtendedState { x, theta }, 0.0).unwrap();
    let u = ControlInputs { q_g: [2.0, 3.0, 2.7] };
    let dist = dist0(&rig);
    let (_, jac) = f.transition(&u, &dist).unwrap();
    let w_g = rig.gas_mass_flows(&u);
    let z0 = ExtendedState { x, theta }.to_array();
    let prop = |z: &[f64; 12]| {
        let e = ExtendedState::from_slice(z);
        rk4_span(&rig, &e.x, &w_g, &dist, &e.theta, 1.0, 0.05).unwrap().to_array()
    };
    for j in 0..12 {
        let h = 1e-5 * z0[j].abs();
        let at = |s: f64| {
            let mut z = z0;
            z[j] += s * h;
            prop(&z)
        };
        let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
        for i in 0..6 {
            let fd = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
            // Compare in units relative to the row and column magnitudes.
            let norm = z0[j].abs() / z0[i].abs();
            let err = (jac[(i, j)] - fd).abs() * norm;
            let scale = jac.row(i).iter().enumerate().map(|(k, v)| (v * z0[k] / z0[i]).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-5 * scale.max(1e-12), "({i},{j}): {} vs {fd}", jac[(i, j)]);
        }
    }
}

#[test]
fn infinite_measurement_noise_returns_the_prediction() {
    let rig = Rig::default();
    let cfg = EkfConfig { r_diag: [1e30; 10], ..EkfConfig::default() };
    let mut f = filter_at_nominal(&rig, cfg);
    let mut g = f.clone();
    let u = ControlInputs::uniform(3.0);
    let dist = dist0(&rig);
    let mut y = rig
        .measurement_map(&f.estimate().x, &rig.gas_mass_flows(&u), &dist, &f.estimate().theta)
        .unwrap();
    y.q_l[0] += 3.0;
    y.p_rh[1] += 500.0;
    f.step(&y, &u, &dist).unwrap();
    g.predict(&u, &dist).unwrap();
    let (a, b) = (f.estimate().to_array(), g.estimate().to_array());
    for k in 0..12 {
        assert!((a[k] - b[k]).abs() <= 1e-12 * b[k].abs(), "{k}");
    }
}

#[test]
fn exact_model_gives_vanishing_innovations() {
    let rig = Rig::default();
    let u = ControlInputs::uniform(2.5);
    let sim = SimConfig { noise_std: NoiseStd::ZERO, ..SimConfig::default() };
    let profile = DisturbanceProfile::constant([0.8, 0.6, 0.8], 0.3).unwrap();
    let mut twin = Twin::new(rig, sim, profile, ThetaVector::default(), u).unwrap();
    let mut f = filter_at_nominal(&rig, EkfConfig::default());
    for _ in 0..100 {
        let s = twin.step(&u).unwrap();
        let r = f.step(&s.measured, &u, &s.dist).unwrap();
        let y = s.measured.to_array();
        for (k, nu) in r.innovation.iter().enumerate() {
            assert!(nu.abs() < 1e-6 * y[k].abs(), "t = {}: channel {k} innovation {nu}", s.t);
        }
    }
}

#[test]
fn filter_tracks_a_reservoir_coefficient_offset() {
    let rig = Rig::default();
    let mut truth = ThetaVector::default();
    truth.res[0] *= 0.9;
    let u = ControlInputs::uniform(2.5);
    let sim = SimConfig { rng_seed: 4, ..SimConfig::default() };
    let profile = DisturbanceProfile::constant([0.8, 0.6, 0.8], 0.3).unwrap();
    let mut twin = Twin::new(rig, sim, profile, truth, u).unwrap();
    let mut f = filter_at_nominal(&rig, EkfConfig::default());
    let mut last = None;
    for _ in 0..120 {
        let s = twin.step(&u).unwrap();
        let r = f.step(&s.measured, &u, &s.dist).unwrap();
        let p = f.covariance();
        let scaled = nalgebra::SMatrix::<f64, 12, 12>::from_fn(|i, j| p[(i, j)] / (p[(i, i)] * p[(j, j)]).sqrt());
        assert!((p - p.transpose()).amax() < 1e-12 * p.amax());
        assert!(scaled.symmetric_eigenvalues().min() >= -1e-10);
        assert!(!r.covariance_reset);
        last = Some(r);
    }
    let r = last.unwrap();
    let rel = r.theta_hat.res[0] / truth.res[0] - 1.0;
    assert!(rel.abs() < 0.05, "θ_res,1 off by {rel}");
}

#[test]
fn ekf_config_is_validated() {
    assert!(EkfConfig::default().validate().is_ok());
    let bad = EkfConfig { dt: 0.0, ..EkfConfig::default() };
    assert!(bad.validate().is_err());
    let mut bad = EkfConfig::default();
    bad.theta_lower[2] = 1.0;
    assert!(bad.validate().is_err());
}

fn model_outputs(rig: &Rig, theta: &ThetaVector, u: &ControlInputs) -> crate::model::MeasurementVector {
    let x = steady(rig, theta, u);
    rig.measurement_map(&x, &rig.gas_mass_flows(u), &dist0(rig), theta).unwrap()
}

#[test]
fn ss_fit_recovers_interior_parameters() {
    let rig = Rig::default();
    let u = ControlInputs { q_g: [2.2, 2.9, 2.4] };
    let nom = ThetaVector::default().to_array();
    for (k, f) in [[0.8, 1.1, 1.3, 0.9, 1.2, 0.7], [1.5, 0.6, 1.0, 1.4, 1.0, 1.6]].iter().enumerate() {
        let truth = ThetaVector::from_slice(&std::array::from_fn::<f64, 6, _>(|i| nom[i] * f[i]));
        let y = model_outputs(&rig, &truth, &u);
        let out = ss_fit(&rig, &y, &u, &dist0(&rig), &SsFitConfig::default(), &ThetaVector::default(), &NetworkState::nominal())
            .unwrap();
        for (a, b) in out.solution.theta.to_array().iter().zip(truth.to_array()) {
            assert!((a / b - 1.0).abs() < 1e-6, "case {k}: {:?}", out.solution.theta);
        }
        assert!(out.at_bounds.is_empty());
    }
}

#[test]
fn ss_fit_reports_active_bounds() {
    let rig = Rig::default();
    let u = ControlInputs::uniform(2.5);
    let mut truth = ThetaVector::default();
    truth.res[1] *= 2.5;
    let y = model_outputs(&rig, &truth, &u);
    let out =
        ss_fit(&rig, &y, &u, &dist0(&rig), &SsFitConfig::default(), &ThetaVector::default(), &NetworkState::nominal()).unwrap();
    assert!(out.at_bounds.contains(&1), "{:?}", out.at_bounds);
}

#[test]
fn ss_fit_config_is_validated() {
    let mut c = SsFitConfig::default();
    c.weights[0][1] = 0.5;
    assert!(c.validate().is_err());
    let c = SsFitConfig { alpha_upper: 1.0, ..SsFitConfig::default() };
    assert!(c.validate().is_err());
    let mut c = SsFitConfig::default();
    c.weights[2][2] = -1.0;
    assert!(c.validate().is_err());
}

#[test]
fn noiseless_monte_carlo_collapses() {
    let rig = Rig::default();
    let cfg = McConfig { n_runs: 30, noise: NoiseStd::ZERO, ..McConfig::default() };
    let r = identifiability_mc(&rig, &cfg).unwrap();
    assert_eq!(r.n_failed, 0);
    let truth = ThetaVector::default().to_array();
    for e in &r.estimates {
        for k in 0..6 {
            assert!((e[k] / truth[k] - 1.0).abs() < 1e-6);
        }
    }
    for el in &r.ellipses {
        assert!(el.area < 1e-10, "{el:?}");
    }
}

#[test]
fn default_parameter_set_stays_interior() {
    let rig = Rig::default();
    let r = identifiability_mc(&rig, &McConfig::default()).unwrap();
    assert_eq!(r.n_failed, 0, "{:?}", r.failures);
    assert_eq!(r.bound_hits, 0);
    for s in &r.stats {
        assert!(s.std / s.mean < 0.1, "{s:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    r.write_json(&dir.path().join("mc.json")).unwrap();
    r.write_estimates_csv(&dir.path().join("estimates.csv")).unwrap();
    r.write_histograms_csv(&dir.path().join("hist.csv"), 20).unwrap();
    let back: McReport = serde_json::from_reader(std::fs::File::open(dir.path().join("mc.json")).unwrap()).unwrap();
    assert_eq!(back.estimates.len(), 100);
    let hist = std::fs::read_to_string(dir.path().join("hist.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 6 * 20);
}

#[test]
fn alpha_parameter_set_report_is_consistent() {
    let rig = Rig::default();
    let cfg = McConfig { fit: SsFitConfig { set: FitParameterSet::AlphaL, ..SsFitConfig::default() }, ..McConfig::default() };
    let r = identifiability_mc(&rig, &cfg).unwrap();
    assert_eq!(r.n_failed, 0, "{:?}", r.failures);
    assert_eq!(r.names[3], "alpha_l_1");
    assert_eq!(r.bound_hits, r.stats.iter().map(|s| s.bound_hits).sum::<usize>());
    assert!(r.runs_at_bounds <= r.bound_hits);
    for s in &r.stats[3..] {
        assert!(s.min >= cfg.fit.alpha_lower && s.max <= cfg.fit.alpha_upper);
    }
    for p in &r.flagged {
        assert!(p.corr.abs() > r.corr_threshold && (r.correlation[p.i][p.j] - p.corr).abs() < 1e-15);
    }
    assert_eq!(r.ellipses.len(), 15);
}
