use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::fit::{ss_fit, SsFitConfig};
use super::EstimationError;
use crate::model::{ControlInputs, DisturbanceState, MeasurementVector, NetworkState, Rig, ThetaVector};
use crate::nlp::FitParameterSet;
use crate::twin::{DisturbanceProfile, NoiseStd, SimConfig, Twin};

/// Monte Carlo of repeated steady-state fits on noisy twin data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_runs: usize,
    pub seed: u64,
    /// Samples averaged per fit (one detector window at 1 Hz).
    pub window: usize,
    pub noise: NoiseStd,
    /// Each run draws its lift-gas rates uniformly from this range, sL/min.
    pub u_range: (f64, f64),
    pub v_o: [f64; 3],
    pub p_pump_barg: f64,
    pub theta_true: ThetaVector,
    pub fit: SsFitConfig,
    /// Correlations above this magnitude are flagged.
    pub corr_threshold: f64,
    /// Confidence level of the reported ellipses.
    pub ellipse_level: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_runs: 100,
            seed: 1,
            window: 40,
            noise: NoiseStd::default(),
            u_range: (1.5, 3.5),
            v_o: [0.8, 0.6, 0.8],
            p_pump_barg: 0.3,
            theta_true: ThetaVector::default(),
            fit: SsFitConfig::default(),
            corr_threshold: 0.5,
            ellipse_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub bound_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub i: usize,
    pub j: usize,
    pub center: [f64; 2],
    /// Semi-axes, major first.
    pub semi_axes: [f64; 2],
    /// Angle of the major axis from the i axis, rad, in normalized
    /// coordinates (each parameter divided by its mean).
    pub angle: f64,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedPair {
    pub i: usize,
    pub j: usize,
    pub corr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub set: FitParameterSet,
    pub n_runs: usize,
    pub n_failed: usize,
    pub failures: Vec<String>,
    pub names: Vec<String>,
    pub estimates: Vec<[f64; 6]>,
    pub stats: Vec<ParamStats>,
    /// Runs with at least one parameter on a bound.
    pub runs_at_bounds: usize,
    /// Bound hits over all runs and parameters.
    pub bound_hits: usize,
    pub correlation: [[f64; 6]; 6],
    pub corr_threshold: f64,
    pub max_abs_corr: f64,
    pub flagged: Vec<FlaggedPair>,
    /// Largest |corr(θ_res,i, p_{3+i})| over the wells.
    pub max_within_well_corr: f64,
    pub ellipses: Vec<Ellipse>,
}

pub fn param_names(set: FitParameterSet) -> Vec<String> {
    let second = match set {
        FitParameterSet::ThetaTop => "theta_top",
        FitParameterSet::AlphaL => "alpha_l",
    };
    (0..6).map(|k| if k < 3 { format!("theta_res_{}", k + 1) } else { format!("{second}_{}", k - 2) }).collect()
}

struct RunResult {
    params: [f64; 6],
    at_bounds: Vec<usize>,
}

fn one_run(rig: &Rig, cfg: &McConfig, k: usize) -> Result<RunResult, EstimationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64));
    let u = ControlInputs { q_g: std::array::from_fn(|_| rng.random_range(cfg.u_range.0..=cfg.u_range.1)) };
    let sim = SimConfig { noise_std: cfg.noise, rng_seed: rng.random(), ..SimConfig::default() };
    let profile = DisturbanceProfile::constant(cfg.v_o, cfg.p_pump_barg)?;
    let mut twin = Twin::new(*rig, sim, profile, cfg.theta_true, u)?;
    let samples = (0..cfg.window).map(|_| twin.step(&u).map(|s| s.measured)).collect::<Result<Vec<_>, _>>()?;
    let y_bar = MeasurementVector::mean(&samples).ok_or_else(|| EstimationError::Config("empty window".into()))?;
    // The valve openings are exact; the pump pressure is the measured mean.
    let dist = DisturbanceState { v_o: cfg.v_o, p_pump: y_bar.p_pump };
    let out = ss_fit(rig, &y_bar, &u, &dist, &cfg.fit, &ThetaVector::default(), &NetworkState::nominal())?;
    Ok(RunResult { params: out.solution.params, at_bounds: out.at_bounds })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Runs `cfg.n_runs` independent fits in parallel; failed runs are counted
/// and left out of the statistics.
pub fn identifiability_mc(rig: &Rig, cfg: &McConfig) -> Result<McReport, EstimationError> {
    if cfg.n_runs < 30 {
        return Err(EstimationError::Config(format!("n_runs = {} is below 30", cfg.n_runs)));
    }
    if cfg.window == 0 || !(cfg.u_range.0 > 0.0 && cfg.u_range.0 <= cfg.u_range.1) {
        return Err(EstimationError::Config("window must be positive and u_range increasing".into()));
    }
    cfg.fit.validate()?;
    let results: Vec<Result<RunResult, EstimationError>> =
        (0..cfg.n_runs).into_par_iter().map(|k| one_run(rig, cfg, k)).collect();
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    let mut hits = [0usize; 6];
    let mut runs_at_bounds = 0;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => {
                for &b in &r.at_bounds {
                    hits[b] += 1;
                }
                runs_at_bounds += usize::from(!r.at_bounds.is_empty());
                estimates.push(r.params);
            }
            Err(e) => failures.push(format!("run {k}: {e}")),
        }
    }
    if estimates.len() < 2 {
        return Err(EstimationError::Config(format!("only {} of {} runs succeeded", estimates.len(), cfg.n_runs)));
    }
    let names = param_names(cfg.fit.set);
    let cols: Vec<Vec<f64>> = (0..6).map(|k| estimates.iter().map(|e| e[k]).collect()).collect();
    let ms: Vec<(f64, f64)> = cols.iter().map(|c| mean_std(c)).collect();
    let stats = (0..6)
        .map(|k| ParamStats {
            name: names[k].clone(),
            mean: ms[k].0,
            std: ms[k].1,
            min: cols[k].iter().copied().fold(f64::INFINITY, f64::min),
            max: cols[k].iter().copied().fold(f64::NEG_INFINITY, f64::max),
            bound_hits: hits[k],
        })
        .collect();
    let n = estimates.len() as f64;
    let cov = |i: usize, j: usize| {
        cols[i].iter().zip(&cols[j]).map(|(a, b)| (a - ms[i].0) * (b - ms[j].0)).sum::<f64>() / (n - 1.0)
    };
    let correlation: [[f64; 6]; 6] = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let d = ms[i].1 * ms[j].1;
            if i == j {
                1.0
            } else if d > 0.0 {
                cov(i, j) / d
            } else {
                0.0
            }
        })
    });
    let mut flagged = Vec::new();
    let mut max_abs_corr: f64 = 0.0;
    for i in 0..6 {
        for j in i + 1..6 {
            let c = correlation[i][j];
            max_abs_corr = max_abs_corr.max(c.abs());
            if c.abs() > cfg.corr_threshold {
                flagged.push(FlaggedPair { i, j, corr: c });
            }
        }
    }
    let max_within_well_corr = (0..3).map(|i| correlation[i][3 + i].abs()).fold(0.0, f64::max);

    let chi2 = ChiSquared::new(2.0).expect("dof 2").inverse_cdf(cfg.ellipse_level);
    let mut ellipses = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            // Normalized coordinates so the angle compares parameters of
            // different magnitude.
            let (si, sj) = (ms[i].0.abs().max(f64::MIN_POSITIVE), ms[j].0.abs().max(f64::MIN_POSITIVE));
            let (a, b, c) = (cov(i, i) / (si * si), cov(j, j) / (sj * sj), cov(i, j) / (si * sj));
            let mid = 0.5 * (a + b);
            let rad = (0.25 * (a - b).powi(2) + c * c).sqrt();
            let (l1, l2) = (mid + rad, (mid - rad).max(0.0));
            let angle = 0.5 * (2.0 * c).atan2(a - b);
            let semi = [(chi2 * l1).sqrt(), (chi2 * l2).sqrt()];
            ellipses.push(Ellipse {
                i,
                j,
                center: [ms[i].0, ms[j].0],
                semi_axes: semi,
                angle,
                area: std::f64::consts::PI * semi[0] * semi[1],
            });
        }
    }
    Ok(McReport {
        set: cfg.fit.set,
        n_runs: cfg.n_runs,
        n_failed: failures.len(),
        failures,
        names,
        estimates,
        stats,
        runs_at_bounds,
        bound_hits: hits.iter().sum(),
        correlation,
        corr_threshold: cfg.corr_threshold,
        max_abs_corr,
        flagged,
        max_within_well_corr,
        ellipses,
    })
}

impl McReport {
    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self).map_err(std::io::Error::other)
    }

    /// One row per successful run.
    pub fn write_estimates_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["run".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (k, e) in self.estimates.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(e.iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Equal-width histograms, `bins` per parameter.
    pub fn write_histograms_csv(&self, path: &Path, bins: usize) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["parameter", "bin_lo", "bin_hi", "count"])?;
        let bins = bins.max(1);
        for (k, s) in self.stats.iter().enumerate() {
            let width = (s.max - s.min) / bins as f64;
            let mut counts = vec![0usize; bins];
            for e in &self.estimates {
                let b = if width > 0.0 { (((e[k] - s.min) / width) as usize).min(bins - 1) } else { 0 };
                counts[b] += 1;
            }
            for (b, c) in counts.iter().enumerate() {
                let lo = s.min + b as f64 * width;
                w.write_record([s.name.clone(), format!("{lo:?}"), format!("{:?}", lo + width), c.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
