//! Sweeps aggregation configurations and pairs each with a re-identification
//! risk and a utility score, giving an empirical risk-utility curve.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::aggregate::{apply, infer_homes, AggregationConfig, Level, LevelData, NightWindow};
use crate::error::{Error, Result};
use crate::io::{write_atomic, TruthRow};
use crate::model::{TemporalResolution, Trace, ZoneGrid};
use crate::risk::reconstruct::cohort_sizes_from_homes;
use crate::risk::unicity::min_points_for;
use crate::risk::{
    reconstruct, reconstruction_accuracy, AggregatedRecords, PointSets, ReconstructConfig,
    TrialMode, UnicityConfig,
};
use crate::synth::reference_grid;
use crate::utility::{evaluate, Baseline, UtilityReport, UtilityTask, UtilityWeights};

pub const CURVE_HEADER: &str = "config_id,level,spatial_cell_deg,temporal_s,risk,utility";
pub const BREAKDOWN_HEADER: &str = "config_id,level,spatial_cell_deg,temporal_s,risk_kind,risk,min_p_for_threshold,\
density_similarity,od_similarity,home_inference_accuracy,foot_traffic_similarity,composite,od_from_reconstruction";

/// One aggregation configuration of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rung {
    pub level: Level,
    pub cell_deg: f64,
    pub bin_seconds: u64,
}

impl Rung {
    pub fn new(level: Level, cell_deg: f64, bin_seconds: u64) -> Self {
        Self {
            level,
            cell_deg,
            bin_seconds,
        }
    }

    pub fn id(&self) -> String {
        format!("L{}_{}deg_{}s", self.level.index(), self.cell_deg, self.bin_seconds)
    }

    fn order(&self, other: &Rung) -> Ordering {
        self.level
            .cmp(&other.level)
            .then(self.cell_deg.total_cmp(&other.cell_deg))
            .then(self.bin_seconds.cmp(&other.bin_seconds))
    }
}

impl fmt::Display for Rung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Grid of the raw data and of the truth zones; every rung grid covers
    /// the same region with whole multiples of its cell.
    pub base_grid: ZoneGrid,
    /// Bin width at which utility is judged.
    pub task_bin_seconds: u64,
    pub rungs: Vec<Rung>,
    /// Template for unicity at levels 0 and 1; `n_targets` is capped at the
    /// population size. Ping-coupled sampling applies to level 0 only.
    pub unicity: UnicityConfig,
    /// Unicity target for the per-rung minimum-points breakdown.
    pub min_p_threshold: f64,
    pub max_p: usize,
    pub weights: UtilityWeights,
    pub night: NightWindow,
}

impl SweepConfig {
    /// Twelve rungs over all four levels on the reference grid.
    pub fn reference(seed: u64) -> Self {
        use Level::*;
        let rungs = [
            (Raw, 0.0025, 3600),
            (Raw, 0.01, 3600),
            (Coarse, 0.0025, 3600),
            (Coarse, 0.01, 3600),
            (Coarse, 0.04, 21_600),
            (Coarse, 0.16, 86_400),
            (Aggregated, 0.0025, 3600),
            (Aggregated, 0.01, 3600),
            (Aggregated, 0.04, 21_600),
            (CoarseAggregated, 0.0025, 3600),
            (CoarseAggregated, 0.01, 3600),
            (CoarseAggregated, 0.04, 21_600),
        ]
        .into_iter()
        .map(|(l, c, b)| Rung::new(l, c, b))
        .collect();
        Self {
            base_grid: reference_grid(),
            task_bin_seconds: 3600,
            rungs,
            unicity: UnicityConfig::trace_pings(4, 200, 50, seed),
            min_p_threshold: 0.95,
            max_p: 8,
            weights: UtilityWeights::default(),
            night: NightWindow::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.task_bin_seconds == 0 {
            return Err(Error::InvalidConfig("task bin must be positive".into()));
        }
        for level in Level::ALL {
            let ladder: Vec<&Rung> = self.rungs.iter().filter(|r| r.level == level).collect();
            if ladder.is_empty() {
                return Err(Error::InvalidConfig(format!("no rung for level {}", level.index())));
            }
            for w in ladder.windows(2) {
                let finer_or_equal = w[0].cell_deg <= w[1].cell_deg && w[0].bin_seconds <= w[1].bin_seconds;
                if !finer_or_equal || w[0] == w[1] {
                    return Err(Error::InvalidConfig(format!(
                        "rungs of level {} must go fine to coarse ({} then {})",
                        level.index(),
                        w[0],
                        w[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskKind {
    /// p-point unicity.
    Unicity,
    /// Per-step trajectory reconstruction accuracy.
    Reconstruction,
}

impl RiskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskKind::Unicity => "unicity",
            RiskKind::Reconstruction => "reconstruction_accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub config_id: String,
    pub rung: Rung,
    pub risk: f64,
    pub utility: f64,
    pub risk_kind: RiskKind,
    pub utility_report: UtilityReport,
    /// Fewest known points reaching the threshold unicity, when one does.
    pub min_p: Option<usize>,
}

/// Runs every rung of `cfg` on `traces`. Rungs run in parallel; the result
/// is ordered by (level, cell size, bin width).
pub fn sweep(traces: &[Trace], truth: &[TruthRow], cfg: &SweepConfig) -> Result<Vec<TradeoffPoint>> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let task = UtilityTask {
        grid: cfg.base_grid,
        temporal: TemporalResolution::new(cfg.task_bin_seconds)?,
        night: cfg.night,
        weights: cfg.weights,
    };
    let baseline = Baseline::new(traces, &task)?;
    let mut points = cfg
        .rungs
        .par_iter()
        .map(|rung| {
            run_rung(traces, truth, *rung, cfg, &task, &baseline).map_err(|e| Error::Rung {
                rung: rung.id(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.rung.order(&b.rung));
    Ok(points)
}

fn run_rung(
    traces: &[Trace],
    truth: &[TruthRow],
    rung: Rung,
    cfg: &SweepConfig,
    task: &UtilityTask,
    baseline: &Baseline,
) -> Result<TradeoffPoint> {
    log::info!("rung {rung}");
    let grid = cfg.base_grid.with_cell(rung.cell_deg)?;
    let temporal = TemporalResolution::new(rung.bin_seconds)?;
    let mut agg = AggregationConfig::new(rung.level, grid, temporal);
    agg.night = cfg.night;
    let data = apply(traces, &agg)?;

    let (risk, risk_kind, candidates, min_p) = match &data {
        LevelData::Raw(_) | LevelData::Coarse(_) => {
            let sets = match &data {
                LevelData::Coarse(rows) => PointSets::from_level1(rows),
                _ => PointSets::from_traces(traces, &grid, temporal)?,
            };
            let mut ucfg = UnicityConfig {
                n_targets: cfg.unicity.n_targets.min(sets.n_users()),
                ..cfg.unicity.clone()
            };
            // level 1 rows carry no pings to draw from
            if rung.level == Level::Coarse && ucfg.mode == TrialMode::TracePings {
                ucfg.mode = TrialMode::Sampled;
            }
            let est = crate::risk::unicity(&sets, &ucfg)?;
            let min_p = min_points_for(&sets, &ucfg, cfg.min_p_threshold, cfg.max_p)?;
            (est.value, RiskKind::Unicity, None, min_p)
        }
        LevelData::Aggregated(_) | LevelData::CoarseAggregated(_) => {
            // the producer knows how many users each home zone holds
            let homes = infer_homes(traces, &grid, cfg.night)?;
            let mut rcfg = ReconstructConfig::new(grid, temporal, cohort_sizes_from_homes(&homes));
            rcfg.night = cfg.night;
            let records = match &data {
                LevelData::Aggregated(rows) => AggregatedRecords::Points(rows),
                LevelData::CoarseAggregated(rows) => AggregatedRecords::Zones(rows),
                _ => unreachable!(),
            };
            let rec = reconstruct(records, &rcfg)?;
            let acc = reconstruction_accuracy(&rec.candidates, traces, &grid, temporal)?;
            (acc.per_step, RiskKind::Reconstruction, Some(rec.candidates), None)
        }
    };
    let report = evaluate(&data, &grid, temporal, candidates.as_deref(), truth, baseline, task)?;
    Ok(TradeoffPoint {
        config_id: rung.id(),
        rung,
        risk: risk.clamp(0.0, 1.0),
        utility: report.composite,
        risk_kind,
        utility_report: report,
        min_p,
    })
}

fn sorted(points: &[TradeoffPoint]) -> Vec<&TradeoffPoint> {
    let mut v: Vec<&TradeoffPoint> = points.iter().collect();
    v.sort_by(|a, b| a.rung.order(&b.rung));
    v
}

/// Writes the curve CSV sorted by (level, cell size, bin width).
pub fn emit_curve(points: &[TradeoffPoint], path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("no points to emit".into()));
    }
    write_atomic(path, |w| {
        writeln!(w, "{CURVE_HEADER}")?;
        for p in sorted(points) {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                p.config_id,
                p.rung.level.index(),
                p.rung.cell_deg,
                p.rung.bin_seconds,
                p.risk,
                p.utility
            )?;
        }
        Ok(())
    })
}

/// Per-rung metric breakdown alongside the curve.
pub fn emit_breakdown(points: &[TradeoffPoint], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{BREAKDOWN_HEADER}")?;
        for p in sorted(points) {
            let u = &p.utility_report;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                p.config_id,
                p.rung.level.index(),
                p.rung.cell_deg,
                p.rung.bin_seconds,
                p.risk_kind.as_str(),
                p.risk,
                p.min_p.map(|m| m.to_string()).unwrap_or_default(),
                u.density_similarity,
                u.od_similarity,
                u.home_inference_accuracy,
                u.foot_traffic_similarity,
                u.composite,
                u.od_from_reconstruction
            )?;
        }
        Ok(())
    })
}
