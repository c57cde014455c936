use std::io::Write;
use std::path::Path;

use super::{TwinError, TwinSnapshot};
use crate::model::Rig;

/// Version of the sample column layout written by [`ExperimentLog`].
pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Time-indexed record of a twin run.
#[derive(Debug, Clone)]
pub struct ExperimentLog {
    pub rig: Rig,
    pub samples: Vec<TwinSnapshot>,
    /// Error that ended the run early, if any.
    pub failure: Option<TwinError>,
}

impl ExperimentLog {
    pub fn new(rig: Rig) -> Self {
        Self { rig, samples: Vec::new(), failure: None }
    }

    /// Column names of [`Self::sample_row`]. Pressures are reported in bar
    /// gauge, liquid rates in L/min and gas rates in sL/min.
    pub fn sample_header() -> Vec<String> {
        let mut h = vec!["t".to_string()];
        let per_well = |h: &mut Vec<String>, name: &str| (1..=3).for_each(|i| h.push(format!("{name}_{i}")));
        per_well(&mut h, "p_rh_barg");
        h.push("p_pump_barg".into());
        for name in ["q_l_lpm", "q_g_slpm", "q_g_sp", "q_g_applied", "v_o", "theta_res_true", "theta_top_true", "m_g_true", "m_l_true"] {
            per_well(&mut h, name);
        }
        h
    }

    pub fn sample_row(&self, s: &TwinSnapshot) -> Vec<String> {
        let bar = |p: f64| self.rig.to_gauge_bar(p);
        let m = &s.measured;
        let mut r = vec![s.t];
        r.extend(m.p_rh.map(bar));
        r.push(bar(m.p_pump));
        r.extend(m.q_l);
        r.extend(m.q_g);
        r.extend(s.setpoint.q_g);
        r.extend(s.applied_qg);
        r.extend(s.dist.v_o);
        r.extend(s.true_theta.res);
        r.extend(s.true_theta.top);
        r.extend(s.true_state.m_g);
        r.extend(s.true_state.m_l);
        // Shortest round-trip representation keeps re-parsed logs exact.
        r.into_iter().map(|v| format!("{v:?}")).collect()
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::sample_header())?;
        for s in &self.samples {
            w.write_record(self.sample_row(s))?;
        }
        w.flush()
    }

    /// Writes the log to any sink, starting with a schema comment line.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# twin log schema {LOG_SCHEMA_VERSION}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::sample_header())?;
        for s in &self.samples {
            w.write_record(self.sample_row(s))?;
        }
        w.flush()
    }
}
