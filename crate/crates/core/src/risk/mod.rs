//! Re-identification risk: p-point unicity for user-keyed levels and
//! trajectory reconstruction for de-linked levels.

pub mod assignment;
pub mod decay;
pub mod reconstruct;
pub mod unicity;

use std::path::Path;

use crate::error::Result;
use crate::io::write_atomic;

pub use decay::{unicity_decay, DecayReport, DecayRung};
pub use reconstruct::{
    reconstruct, reconstruction_accuracy, AccuracyReport, AggregatedRecords, Candidate,
    CandidateStep, CohortSizes, ReconstructConfig, Reconstruction,
};
pub use unicity::{unicity, PointSets, TrialMode, UnicityConfig, UnicityEstimate};

pub const RISK_HEADER: &str = "metric,level,spatial_cell_deg,temporal_s,p,value";
pub const RECONSTRUCTION_HEADER: &str = "candidate_id,zone,time_bin";

/// One row of a risk report.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskRow {
    pub metric: String,
    pub level: u8,
    pub spatial_cell_deg: f64,
    pub temporal_s: u64,
    /// Known points, for unicity metrics.
    pub p: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RiskReport {
    pub rows: Vec<RiskRow>,
}

impl RiskReport {
    pub fn push(&mut self, metric: &str, level: u8, cell_deg: f64, temporal_s: u64, p: Option<usize>, value: f64) {
        self.rows.push(RiskRow {
            metric: metric.to_string(),
            level,
            spatial_cell_deg: cell_deg,
            temporal_s,
            p,
            value,
        });
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.value)
    }

    /// Unicity rows for each rung of a decay run, plus the fitted exponent.
    pub fn add_decay(&mut self, level: u8, p: usize, decay: &DecayReport) {
        for r in &decay.rungs {
            self.push("unicity", level, r.cell_deg, r.bin_seconds, Some(p), r.estimate.value);
        }
        let (cell, bin) = decay
            .rungs
            .first()
            .map_or((0.0, 0), |r| (r.cell_deg, r.bin_seconds));
        self.push("decay_exponent", level, cell, bin, Some(p), decay.exponent);
    }

    pub fn add_accuracy(&mut self, level: u8, cell_deg: f64, temporal_s: u64, acc: &AccuracyReport) {
        self.push("reconstruction_accuracy", level, cell_deg, temporal_s, None, acc.per_step);
        self.push("trajectory_exact_match", level, cell_deg, temporal_s, None, acc.exact_match_rate);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            writeln!(w, "{RISK_HEADER}")?;
            for r in &self.rows {
                let p = r.p.map(|p| p.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    r.metric, r.level, r.spatial_cell_deg, r.temporal_s, p, r.value
                )?;
            }
            Ok(())
        })
    }
}

/// Level 1 shaped dump of reconstructed candidates.
pub fn write_reconstruction(candidates: &[Candidate], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{RECONSTRUCTION_HEADER}")?;
        for c in candidates {
            for s in &c.steps {
                writeln!(w, "c{},{},{}", c.id, s.zone, s.time_bin)?;
            }
        }
        Ok(())
    })
}
