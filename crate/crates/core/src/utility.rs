//! Task-based utility: what each aggregation level still supports for
//! density maps, origin-destination flows, home inference and foot traffic.
//!
//! Counting works on presences, the distinct (entity, zone, bin) triples a
//! level exposes. The entity is the user at levels 0 and 1 and the home zone
//! at levels 2 and 3, so two users who share a home and are in the same zone
//! in the same bin collapse into one presence once ids are erased.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;

use crate::aggregate::{infer_home, infer_home_coarse, Level, LevelData, NightWindow};
use crate::error::{Error, Result};
use crate::io::{write_atomic, TruthRow};
use crate::model::{time_bin, CoarsePing, TemporalResolution, Trace, ZoneGrid, ZoneId};
use crate::risk::Candidate;

pub const UTILITY_HEADER: &str = "metric,level,spatial_cell_deg,temporal_s,value";
pub const OD_HEADER: &str = "from_zone,to_zone,count";

/// `(row, col)` of a grid zone.
pub type Cell = (u32, u32);

/// Half-open `[start, end)` in epoch seconds; a record belongs to the window
/// when its time bin starts inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub start: u64,
    pub end: u64,
}

impl TimeWindow {
    pub const ALL: TimeWindow = TimeWindow {
        start: 0,
        end: u64::MAX,
    };

    pub fn contains(&self, t: u64) -> bool {
        (self.start..self.end).contains(&t)
    }
}

fn cell_of_zone(zone: &ZoneId, grid: &ZoneGrid) -> Result<Cell> {
    match zone.grid_cell() {
        Some((r, c)) if r < grid.n_rows() && c < grid.n_cols() => Ok((r, c)),
        _ => Err(Error::InvalidConfig(format!("zone {zone} is not a cell of the grid"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Presence {
    entity: u32,
    cell: Cell,
    bin: u64,
}

struct Interner<'a>(HashMap<&'a str, u32>);

impl<'a> Interner<'a> {
    fn new() -> Self {
        Self(HashMap::new())
    }

    fn id(&mut self, s: &'a str) -> u32 {
        let next = self.0.len() as u32;
        *self.0.entry(s).or_insert(next)
    }
}

/// Distinct presences of `data`. Points (levels 0 and 2) are placed on
/// `grid` and binned with `temporal`; levels 1 and 3 keep the zones and bins
/// they were published with, which must be cells of `grid`.
fn presences(data: &LevelData, grid: &ZoneGrid, temporal: TemporalResolution) -> Result<Vec<Presence>> {
    let mut ids = Interner::new();
    let mut out = match data {
        LevelData::Raw(traces) => {
            let entities: Vec<u32> = traces.iter().map(|t| ids.id(t.user_id())).collect();
            traces
                .par_iter()
                .zip(entities)
                .map(|(tr, entity)| {
                    tr.fixes()
                        .iter()
                        .map(|f| {
                            Ok(Presence {
                                entity,
                                cell: grid.cell_of(f.point)?,
                                bin: time_bin(f.t, temporal),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
        }
        LevelData::Coarse(rows) => rows
            .iter()
            .map(|r| {
                Ok(Presence {
                    entity: ids.id(&r.user_id),
                    cell: cell_of_zone(&r.zone, grid)?,
                    bin: r.time_bin,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        LevelData::Aggregated(rows) => rows
            .iter()
            .map(|r| {
                Ok(Presence {
                    entity: ids.id(r.home_zone.as_str()),
                    cell: grid.cell_of(r.point)?,
                    bin: r.time_bin,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        LevelData::CoarseAggregated(rows) => rows
            .iter()
            .map(|r| {
                Ok(Presence {
                    entity: ids.id(r.home_zone.as_str()),
                    cell: cell_of_zone(&r.visit_zone, grid)?,
                    bin: r.time_bin,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    out.par_sort_unstable();
    out.dedup();
    Ok(out)
}

/// Presence counts per zone.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub grid: ZoneGrid,
    pub counts: BTreeMap<Cell, u64>,
}

impl DensityMap {
    pub fn get(&self, zone: &ZoneId) -> u64 {
        zone.grid_cell()
            .and_then(|c| self.counts.get(&c).copied())
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Share of the total mass in each zone.
    pub fn normalized(&self) -> BTreeMap<ZoneId, f64> {
        let total = self.total().max(1) as f64;
        self.counts
            .iter()
            .map(|(&(r, c), &n)| (ZoneId::grid(r, c), n as f64 / total))
            .collect()
    }

    pub fn similarity(&self, truth: &DensityMap) -> Result<f64> {
        same_grid(&self.grid, &truth.grid)?;
        Ok(sparse_similarity(&self.counts, &truth.counts))
    }
}

/// Presence counts per zone within `window`. Raw pings are placed with
/// `zone_of` first, so level 0 and level 1 counts agree exactly when level 1
/// was produced on the same grid and bins.
pub fn density_map(
    data: &LevelData,
    grid: &ZoneGrid,
    temporal: TemporalResolution,
    window: TimeWindow,
) -> Result<DensityMap> {
    let mut counts = BTreeMap::new();
    for p in presences(data, grid, temporal)? {
        if window.contains(temporal.bin_start(p.bin).0) {
            *counts.entry(p.cell).or_default() += 1;
        }
    }
    Ok(DensityMap { grid: *grid, counts })
}

/// Presence counts per (zone, bin).
#[derive(Debug, Clone, PartialEq)]
pub struct FootTraffic {
    pub grid: ZoneGrid,
    pub temporal: TemporalResolution,
    pub counts: BTreeMap<(Cell, u64), u64>,
}

impl FootTraffic {
    pub fn get(&self, zone: &ZoneId, bin: u64) -> u64 {
        zone.grid_cell()
            .and_then(|c| self.counts.get(&(c, bin)).copied())
            .unwrap_or(0)
    }

    pub fn similarity(&self, truth: &FootTraffic) -> Result<f64> {
        same_grid(&self.grid, &truth.grid)?;
        if self.temporal != truth.temporal {
            return Err(Error::ShapeMismatch("time bins differ".into()));
        }
        Ok(sparse_similarity(&self.counts, &truth.counts))
    }
}

pub fn foot_traffic(
    data: &LevelData,
    grid: &ZoneGrid,
    temporal: TemporalResolution,
    window: TimeWindow,
) -> Result<FootTraffic> {
    let mut counts = BTreeMap::new();
    for p in presences(data, grid, temporal)? {
        if window.contains(temporal.bin_start(p.bin).0) {
            *counts.entry((p.cell, p.bin)).or_default() += 1;
        }
    }
    Ok(FootTraffic {
        grid: *grid,
        temporal,
        counts,
    })
}

/// Zone-to-zone transition counts. Conceptually a dense square matrix over
/// every zone of `grid`; only non-zero entries are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ODMatrix {
    pub grid: ZoneGrid,
    pub counts: BTreeMap<(Cell, Cell), u64>,
}

impl ODMatrix {
    pub fn new(grid: ZoneGrid) -> Self {
        Self {
            grid,
            counts: BTreeMap::new(),
        }
    }

    pub fn n_zones(&self) -> usize {
        self.grid.n_zones()
    }

    pub fn get(&self, from: &ZoneId, to: &ZoneId) -> u64 {
        match (from.grid_cell(), to.grid_cell()) {
            (Some(a), Some(b)) => self.counts.get(&(a, b)).copied().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn similarity(&self, truth: &ODMatrix) -> Result<f64> {
        same_grid(&self.grid, &truth.grid)?;
        Ok(sparse_similarity(&self.counts, &truth.counts))
    }

    /// Counts each change of zone between consecutive entries of one
    /// time-ordered sequence.
    fn add_sequence(&mut self, cells: impl IntoIterator<Item = Cell>) {
        let mut prev: Option<Cell> = None;
        for c in cells {
            if let Some(p) = prev {
                if p != c {
                    *self.counts.entry((p, c)).or_default() += 1;
                }
            }
            prev = Some(c);
        }
    }

    fn merge(mut self, other: ODMatrix) -> ODMatrix {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_default() += v;
        }
        self
    }

    /// Non-zero entries, row-major by (from, to).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            writeln!(w, "{OD_HEADER}")?;
            for (&((r0, c0), (r1, c1)), n) in &self.counts {
                writeln!(w, "{},{},{n}", ZoneId::grid(r0, c0), ZoneId::grid(r1, c1))?;
            }
            Ok(())
        })
    }
}

fn same_grid(a: &ZoneGrid, b: &ZoneGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "grids differ ({}x{} at {} deg vs {}x{} at {} deg)",
            a.n_rows(),
            a.n_cols(),
            a.cell_deg(),
            b.n_rows(),
            b.n_cols(),
            b.cell_deg()
        )))
    }
}

/// Origin-destination flows of a linkable level: within each user's
/// time-ordered sequence, every change of zone between consecutive records
/// is one trip. Level 0 pings are placed on `grid` first, so level 0 and
/// level 1 agree exactly at equal grid and bins. Levels 2 and 3 carry no
/// user linkage; use [`od_from_candidates`] on a reconstruction instead.
pub fn od_matrix(data: &LevelData, grid: &ZoneGrid, temporal: TemporalResolution) -> Result<ODMatrix> {
    match data {
        LevelData::Raw(traces) => {
            let parts = traces
                .par_iter()
                .map(|tr| {
                    let cells = tr
                        .fixes()
                        .iter()
                        .map(|f| Ok((grid.cell_of(f.point)?, time_bin(f.t, temporal))))
                        .collect::<Result<Vec<_>>>()?;
                    let mut m = ODMatrix::new(*grid);
                    m.add_sequence(cells.into_iter().map(|c| c.0));
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(parts.into_iter().fold(ODMatrix::new(*grid), ODMatrix::merge))
        }
        LevelData::Coarse(rows) => {
            let mut m = ODMatrix::new(*grid);
            for user_rows in group_by_user(rows).into_values() {
                let cells = user_rows
                    .iter()
                    .map(|r| cell_of_zone(&r.zone, grid))
                    .collect::<Result<Vec<_>>>()?;
                m.add_sequence(cells);
            }
            Ok(m)
        }
        other => Err(Error::UnlinkableInput(other.level().index())),
    }
}

/// Level 1 rows per user, each user's rows stably ordered by bin.
fn group_by_user(rows: &[CoarsePing]) -> BTreeMap<&str, Vec<&CoarsePing>> {
    let mut by_user: BTreeMap<&str, Vec<&CoarsePing>> = BTreeMap::new();
    for r in rows {
        by_user.entry(r.user_id.as_str()).or_default().push(r);
    }
    for v in by_user.values_mut() {
        v.sort_by_key(|r| r.time_bin);
    }
    by_user
}

/// Flows along reconstructed candidate trajectories. Candidate zones must be
/// cells of `grid`.
pub fn od_from_candidates(candidates: &[Candidate], grid: &ZoneGrid) -> Result<ODMatrix> {
    let mut m = ODMatrix::new(*grid);
    for c in candidates {
        let cells = c
            .steps
            .iter()
            .map(|s| cell_of_zone(&s.zone, grid))
            .collect::<Result<Vec<_>>>()?;
        m.add_sequence(cells);
    }
    Ok(m)
}

/// `1 - |estimated - truth|_1 / |truth|_1`, clamped to `[0, 1]`.
/// An all-zero truth scores 1 only against an all-zero estimate.
pub fn similarity(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimated entries vs {} truth entries",
            estimated.len(),
            truth.len()
        )));
    }
    let mass: f64 = truth.iter().sum();
    let dist: f64 = estimated.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum();
    Ok(score(dist, mass))
}

fn score(dist: f64, mass: f64) -> f64 {
    if mass <= 0.0 {
        return if dist == 0.0 { 1.0 } else { 0.0 };
    }
    (1.0 - dist / mass).clamp(0.0, 1.0)
}

/// [`similarity`] over sparse maps; missing keys are zero.
fn sparse_similarity<K: Ord>(estimated: &BTreeMap<K, u64>, truth: &BTreeMap<K, u64>) -> f64 {
    let mass: u64 = truth.values().sum();
    let mut dist: u64 = 0;
    for (k, &t) in truth {
        dist += t.abs_diff(estimated.get(k).copied().unwrap_or(0));
    }
    for (k, &e) in estimated {
        if !truth.contains_key(k) {
            dist += e;
        }
    }
    score(dist as f64, mass as f64)
}

/// Similarity of a coarse estimate against a fine truth. The estimate is
/// rescaled to the truth's total mass and each coarse entry is spread evenly
/// over the `block` fine entries it covers. With equal masses the L1
/// distance is at most twice the mass, so it is halved: the result is the
/// overlap of the two distributions.
fn projected_similarity<F, C>(
    truth: &BTreeMap<F, u64>,
    estimate: &BTreeMap<C, u64>,
    coarsen: impl Fn(&F) -> C,
    block: f64,
) -> f64
where
    C: Ord + Copy,
{
    let mass: u64 = truth.values().sum();
    let est_mass: u64 = estimate.values().sum();
    if mass == 0 || est_mass == 0 {
        return score(est_mass as f64, mass as f64);
    }
    let scale = mass as f64 / est_mass as f64 / block;
    let spread = |c: &C| estimate.get(c).map_or(0.0, |&e| e as f64 * scale);

    // coarse key -> (sum |t - u| over covered truth entries, how many)
    let mut groups: BTreeMap<C, (f64, f64)> = BTreeMap::new();
    for (f, &t) in truth {
        let c = coarsen(f);
        let u = spread(&c);
        let g = groups.entry(c).or_default();
        g.0 += (t as f64 - u).abs();
        g.1 += 1.0;
    }
    let mut dist = 0.0;
    for (c, (abs, n)) in &groups {
        dist += abs + (block - n).max(0.0) * spread(c);
    }
    for (c, &e) in estimate {
        if !groups.contains_key(c) {
            dist += e as f64 * scale * block;
        }
    }
    score(dist / 2.0, mass as f64)
}

/// Composite weights for (density, od, home, foot traffic).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityWeights {
    pub density: f64,
    pub od: f64,
    pub home: f64,
    pub foot_traffic: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            density: 0.25,
            od: 0.35,
            home: 0.20,
            foot_traffic: 0.20,
        }
    }
}

impl UtilityWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.density, self.od, self.home, self.foot_traffic]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        let ok = w.iter().all(|x| x.is_finite() && *x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::BadWeights(w))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityReport {
    pub density_similarity: f64,
    pub od_similarity: f64,
    pub home_inference_accuracy: f64,
    pub foot_traffic_similarity: f64,
    pub composite: f64,
    pub weights: UtilityWeights,
    /// OD was scored on reconstructed trajectories, so it partly measures
    /// the attack rather than the data.
    pub od_from_reconstruction: bool,
}

impl UtilityReport {
    /// `(metric, value)` pairs in report order.
    pub fn metrics(&self) -> [(&'static str, f64); 5] {
        [
            ("density_similarity", self.density_similarity),
            ("od_similarity", self.od_similarity),
            ("home_inference_accuracy", self.home_inference_accuracy),
            ("foot_traffic_similarity", self.foot_traffic_similarity),
            ("composite", self.composite),
        ]
    }
}

/// Weighted composite of `(density, od, home, foot traffic)` scores.
pub fn utility_score(metrics: [f64; 4], weights: UtilityWeights) -> Result<UtilityReport> {
    weights.validate()?;
    let composite = metrics
        .iter()
        .zip(weights.as_array())
        .map(|(m, w)| m * w)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(UtilityReport {
        density_similarity: metrics[0],
        od_similarity: metrics[1],
        home_inference_accuracy: metrics[2],
        foot_traffic_similarity: metrics[3],
        composite,
        weights,
        od_from_reconstruction: false,
    })
}

/// One report per row group, written as `metric,level,cell,bin,value`.
pub fn write_utility_csv(rows: &[(Level, f64, u64, &UtilityReport)], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{UTILITY_HEADER}")?;
        for (level, cell, bin, report) in rows {
            for (metric, value) in report.metrics() {
                writeln!(w, "{metric},{},{cell},{bin},{value}", level.index())?;
            }
        }
        Ok(())
    })
}

/// Home zone of every truth row, re-expressed on `grid`. Truth zones are
/// cells of `truth_grid`, which must nest inside `grid`.
fn truth_homes_on<'t>(
    truth: &'t [TruthRow],
    truth_grid: &ZoneGrid,
    grid: &ZoneGrid,
) -> Result<Vec<(&'t str, ZoneId)>> {
    truth
        .iter()
        .map(|row| {
            let centre = truth_grid.centroid(&row.home_zone).ok_or_else(|| {
                Error::InvalidConfig(format!("truth zone {} is not a cell of the grid", row.home_zone))
            })?;
            Ok((row.user_id.as_str(), grid.zone_of(centre)?))
        })
        .collect()
}

/// Fraction of truth users whose home zone the data reveals, scored on `grid`.
///
/// Levels 0 and 1 infer each user's home from their own records. Levels 2
/// and 3 carry the home zone in every record but not the number of users
/// behind it, so they score `sum_z min(claimed_z, true_z) / N`, where
/// `claimed_z` comes from `cohort_sizes` (one user per zone present when
/// absent).
pub fn home_inference_accuracy(
    data: &LevelData,
    grid: &ZoneGrid,
    temporal: TemporalResolution,
    night: NightWindow,
    cohort_sizes: Option<&BTreeMap<ZoneId, usize>>,
    truth: &[TruthRow],
    truth_grid: &ZoneGrid,
) -> Result<f64> {
    if truth.is_empty() {
        return Ok(0.0);
    }
    let homes = truth_homes_on(truth, truth_grid, grid)?;
    let n = homes.len() as f64;
    let hits_of = |inferred: HashMap<&str, ZoneId>| {
        homes
            .iter()
            .filter(|(u, z)| inferred.get(u) == Some(z))
            .count() as f64
            / n
    };
    match data {
        LevelData::Raw(traces) => {
            let inferred = traces
                .par_iter()
                .map(|t| Ok((t.user_id(), infer_home(t, grid, night)?)))
                .collect::<Result<HashMap<_, _>>>()?;
            Ok(hits_of(inferred))
        }
        LevelData::Coarse(rows) => {
            let inferred = group_by_user(rows)
                .into_iter()
                .map(|(u, rs)| Ok((u, infer_home_coarse(rs, temporal, night)?)))
                .collect::<Result<HashMap<_, _>>>()?;
            Ok(hits_of(inferred))
        }
        LevelData::Aggregated(_) | LevelData::CoarseAggregated(_) => {
            let claimed: BTreeMap<ZoneId, usize> = match cohort_sizes {
                Some(m) => m.clone(),
                None => home_zones(data).into_iter().map(|z| (z, 1)).collect(),
            };
            let mut true_counts: BTreeMap<&ZoneId, usize> = BTreeMap::new();
            for (_, z) in &homes {
                *true_counts.entry(z).or_default() += 1;
            }
            let hits: usize = true_counts
                .iter()
                .map(|(z, &t)| claimed.get(*z).copied().unwrap_or(0).min(t))
                .sum();
            Ok(hits as f64 / n)
        }
    }
}

fn home_zones(data: &LevelData) -> Vec<ZoneId> {
    let mut zones: Vec<ZoneId> = match data {
        LevelData::Aggregated(rows) => rows.iter().map(|r| r.home_zone.clone()).collect(),
        LevelData::CoarseAggregated(rows) => rows.iter().map(|r| r.home_zone.clone()).collect(),
        _ => Vec::new(),
    };
    zones.sort();
    zones.dedup();
    zones
}

/// Resolution at which utility is judged, plus how to weigh the metrics.
/// The task grid is the grid truth zones are written on.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTask {
    pub grid: ZoneGrid,
    pub temporal: TemporalResolution,
    pub night: NightWindow,
    pub weights: UtilityWeights,
}

impl UtilityTask {
    pub fn new(grid: ZoneGrid, temporal: TemporalResolution) -> Self {
        Self {
            grid,
            temporal,
            night: NightWindow::default(),
            weights: UtilityWeights::default(),
        }
    }
}

/// Truth-side products at task resolution, computed once and shared by
/// every rung.
#[derive(Debug, Clone)]
pub struct Baseline {
    density: DensityMap,
    foot: FootTraffic,
    od: ODMatrix,
}

impl Baseline {
    pub fn new(traces: &[Trace], task: &UtilityTask) -> Result<Self> {
        let raw = LevelData::Raw(traces.to_vec());
        Ok(Self {
            density: density_map(&raw, &task.grid, task.temporal, TimeWindow::ALL)?,
            foot: foot_traffic(&raw, &task.grid, task.temporal, TimeWindow::ALL)?,
            od: od_matrix(&raw, &task.grid, task.temporal)?,
        })
    }

    pub fn density(&self) -> &DensityMap {
        &self.density
    }

    pub fn od(&self) -> &ODMatrix {
        &self.od
    }
}

/// Scores one level's output against truth.
///
/// `grid` and `temporal` are the resolution the level was published at;
/// they must coarsen the task resolution by whole factors. Raw data is
/// always scored at task resolution. Levels 2 and 3 need the candidates of
/// a reconstruction for OD and use its per-home candidate counts as the
/// claimed cohort sizes.
pub fn evaluate(
    data: &LevelData,
    grid: &ZoneGrid,
    temporal: TemporalResolution,
    candidates: Option<&[Candidate]>,
    truth: &[TruthRow],
    baseline: &Baseline,
    task: &UtilityTask,
) -> Result<UtilityReport> {
    task.weights.validate()?;
    let (grid, temporal) = match data.level() {
        Level::Raw => (&task.grid, task.temporal),
        _ => (grid, temporal),
    };
    let k = grid.nesting_factor(&task.grid).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "{} deg grid does not nest the {} deg task grid",
            grid.cell_deg(),
            task.grid.cell_deg()
        ))
    })?;
    let (bin, task_bin) = (temporal.bin_seconds(), task.temporal.bin_seconds());
    if bin % task_bin != 0 {
        return Err(Error::InvalidConfig(format!(
            "{bin} s bins are not a multiple of the {task_bin} s task bins"
        )));
    }
    let m = bin / task_bin;
    let up = |(r, c): &Cell| (r / k, c / k);
    let kk = (k as f64).powi(2);

    let density = density_map(data, grid, temporal, TimeWindow::ALL)?;
    let foot = foot_traffic(data, grid, temporal, TimeWindow::ALL)?;
    let (od, from_recon) = match (data.level().is_linked(), candidates) {
        (true, _) => (od_matrix(data, grid, temporal)?, false),
        (false, Some(c)) => (od_from_candidates(c, grid)?, true),
        (false, None) => return Err(Error::UnlinkableInput(data.level().index())),
    };
    let cohorts = candidates.filter(|_| !data.level().is_linked()).map(|cands| {
        let mut sizes: BTreeMap<ZoneId, usize> = BTreeMap::new();
        for c in cands.iter().filter(|c| !c.partial) {
            *sizes.entry(c.home_zone.clone()).or_default() += 1;
        }
        sizes
    });

    let density_sim = projected_similarity(&baseline.density.counts, &density.counts, up, kk);
    let foot_sim = projected_similarity(
        &baseline.foot.counts,
        &foot.counts,
        |(cell, b)| (up(cell), b / m),
        kk * m as f64,
    );
    let od_sim = projected_similarity(&baseline.od.counts, &od.counts, |(a, b)| (up(a), up(b)), kk * kk);
    let home = home_inference_accuracy(data, grid, temporal, task.night, cohorts.as_ref(), truth, &task.grid)?;

    let mut report = utility_score([density_sim, od_sim, home, foot_sim], task.weights)?;
    report.od_from_reconstruction = from_recon;
    Ok(report)
}
