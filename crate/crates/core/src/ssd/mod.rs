//! Steady-state detection by a t-test on the least-squares slope of each
//! signal over a trailing window.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::model::{MeasurementVector, N_MEAS};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SsdError {
    #[error("window holds {0} samples, at least 3 are needed")]
    WindowTooShort(usize),
    #[error("window times and values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("window timestamps are not distinct")]
    DegenerateTimes,
    #[error("invalid detector configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsdConfig {
    /// Window length, s.
    pub window_s: f64,
    /// Test level: a steady signal is flagged non-steady with probability
    /// 1 − alpha.
    pub alpha: f64,
    /// Channels of the measurement vector under test (default: the three
    /// liquid rates).
    pub signals: Vec<usize>,
}

impl Default for SsdConfig {
    fn default() -> Self {
        Self { window_s: 40.0, alpha: 0.9, signals: vec![4, 5, 6] }
    }
}

impl SsdConfig {
    pub fn validate(&self, sample_period: f64) -> Result<(), SsdError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SsdError::Config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.window_s >= 3.0 * sample_period) {
            return Err(SsdError::Config(format!("window of {} s is shorter than three samples", self.window_s)));
        }
        if self.signals.is_empty() || self.signals.iter().any(|&c| c >= N_MEAS) {
            return Err(SsdError::Config(format!("signal indices {:?} must be non-empty and below {N_MEAS}", self.signals)));
        }
        Ok(())
    }

    /// Samples per window at the given sample period.
    pub fn window_len(&self, sample_period: f64) -> usize {
        (self.window_s / sample_period).round() as usize
    }
}

/// Result of the slope test on one signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeTest {
    pub steady: bool,
    /// Slope estimate divided by its standard error (±∞ for a noiseless
    /// ramp, 0 for a constant signal).
    pub t_stat: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsVerdict {
    pub per_signal: Vec<bool>,
    pub t_stats: Vec<f64>,
    /// True when every signal passes.
    pub steady: bool,
}

/// Relative spread under which a window is treated as exactly constant.
pub const CONSTANT_RESOLUTION: f64 = 1e-9;

/// Two-sided critical value of the slope t statistic.
pub fn critical_t(n: usize, alpha: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, (n - 2) as f64).expect("n >= 3");
    dist.inverse_cdf(0.5 + 0.5 * alpha)
}

/// Tests H₀: slope = 0 by ordinary least squares of `values` on `times`.
/// The signal counts as steady when H₀ is not rejected at level
/// 1 − alpha. A perfectly constant window is steady by convention.
pub fn slope_t_test(times: &[f64], values: &[f64], alpha: f64) -> Result<SlopeTest, SsdError> {
    let n = values.len();
    if times.len() != n {
        return Err(SsdError::LengthMismatch(times.len(), n));
    }
    if n < 3 {
        return Err(SsdError::WindowTooShort(n));
    }
    let nf = n as f64;
    // Centre both series first; this keeps the sums exact under shifts.
    let tm = times.iter().sum::<f64>() / nf;
    let ym = values.iter().sum::<f64>() / nf;
    let (mut stt, mut sty) = (0.0, 0.0);
    for (t, y) in times.iter().zip(values) {
        stt += (t - tm) * (t - tm);
        sty += (t - tm) * (y - ym);
    }
    if !(stt > 0.0) {
        return Err(SsdError::DegenerateTimes);
    }
    let slope = sty / stt;
    let sse: f64 = times.iter().zip(values).map(|(t, y)| (y - ym - slope * (t - tm)).powi(2)).sum();
    let spread = values.iter().map(|y| (y - ym).abs()).fold(0.0, f64::max);
    // Variation below any sensor resolution counts as a constant signal.
    if spread <= CONSTANT_RESOLUTION * ym.abs() {
        return Ok(SlopeTest { steady: true, t_stat: 0.0, slope: 0.0 });
    }
    // Residuals at rounding level: the window is an exact line.
    if sse <= (1e-14 * spread.max(ym.abs())).powi(2) * nf {
        let flat = slope.abs() * stt.sqrt() <= 1e-12 * ym.abs().max(spread).max(f64::MIN_POSITIVE);
        let t_stat = if flat { 0.0 } else { f64::INFINITY.copysign(slope) };
        return Ok(SlopeTest { steady: flat, t_stat, slope });
    }
    let se = (sse / (nf - 2.0) / stt).sqrt();
    let t_stat = slope / se;
    Ok(SlopeTest { steady: t_stat.abs() <= critical_t(n, alpha), t_stat, slope })
}

/// Runs the slope test on every window; the network is steady only when
/// all signals are. Windows share the timestamps.
pub fn network_steady(times: &[f64], windows: &[Vec<f64>], alpha: f64) -> Result<SsVerdict, SsdError> {
    let mut per_signal = Vec::with_capacity(windows.len());
    let mut t_stats = Vec::with_capacity(windows.len());
    for w in windows {
        let r = slope_t_test(times, w, alpha)?;
        per_signal.push(r.steady);
        t_stats.push(r.t_stat);
    }
    let steady = per_signal.iter().all(|&s| s);
    Ok(SsVerdict { per_signal, t_stats, steady })
}

/// Trailing window of measurement samples feeding the detector and the
/// window-averaged measurements of the steady-state fit.
#[derive(Debug, Clone)]
pub struct SampleWindow {
    capacity: usize,
    samples: VecDeque<(f64, MeasurementVector)>,
}

impl SampleWindow {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), samples: VecDeque::with_capacity(capacity.max(1)) }
    }

    pub fn push(&mut self, t: f64, y: MeasurementVector) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((t, y));
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|(t, _)| *t).collect()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|(_, y)| y.to_array()[c]).collect()
    }

    pub fn mean(&self) -> Option<MeasurementVector> {
        let v: Vec<MeasurementVector> = self.samples.iter().map(|(_, y)| *y).collect();
        MeasurementVector::mean(&v)
    }

    /// Verdict over the configured signals.
    pub fn verdict(&self, cfg: &SsdConfig) -> Result<SsVerdict, SsdError> {
        let windows: Vec<Vec<f64>> = cfg.signals.iter().map(|&c| self.channel(c)).collect();
        network_steady(&self.times(), &windows, cfg.alpha)
    }
}
