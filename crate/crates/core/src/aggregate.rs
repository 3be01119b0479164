//! The four aggregation levels as record transforms.
//!
//! Levels 2 and 3 replace the user id with the user's inferred home zone and
//! emit rows in a fixed non-user order, so row order carries no linkage.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    time_bin, AggPing, CoarseAggPing, CoarsePing, TemporalResolution, Trace, ZoneGrid, ZoneId,
};

/// Half-open night interval `[start_hour, 24) ∪ [0, end_hour)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NightWindow {
    pub start_hour: u32,
    pub end_hour: u32,
}

impl Default for NightWindow {
    fn default() -> Self {
        Self {
            start_hour: 20,
            end_hour: 4,
        }
    }
}

impl NightWindow {
    pub fn contains(&self, hour: u32) -> bool {
        if self.start_hour <= self.end_hour {
            (self.start_hour..self.end_hour).contains(&hour)
        } else {
            hour >= self.start_hour || hour < self.end_hour
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    /// Raw pings keyed by user.
    Raw = 0,
    /// User, zone, time bin.
    Coarse = 1,
    /// Home zone, precise point, time bin.
    Aggregated = 2,
    /// Home zone, visited zone, time bin.
    CoarseAggregated = 3,
}

impl Level {
    pub const ALL: [Level; 4] = [
        Level::Raw,
        Level::Coarse,
        Level::Aggregated,
        Level::CoarseAggregated,
    ];

    pub fn from_index(i: u8) -> Result<Self> {
        Level::ALL
            .get(i as usize)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("level must be 0-3, got {i}")))
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    /// Whether records still carry a per-user key.
    pub fn is_linked(self) -> bool {
        matches!(self, Level::Raw | Level::Coarse)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationConfig {
    pub level: Level,
    /// Ignored at level 0.
    pub grid: ZoneGrid,
    /// Ignored at level 0.
    pub temporal: TemporalResolution,
    pub night: NightWindow,
    /// Drop level 2/3 cohorts with fewer users than this. Off by default.
    pub min_cohort: Option<usize>,
}

impl AggregationConfig {
    pub fn new(level: Level, grid: ZoneGrid, temporal: TemporalResolution) -> Self {
        Self {
            level,
            grid,
            temporal,
            night: NightWindow::default(),
            min_cohort: None,
        }
    }
}

/// Modal zone among night observations, falling back to all observations
/// when none are at night. Ties go to the lexicographically smallest id.
pub fn modal_zone<I>(observations: I, night: NightWindow) -> Option<ZoneId>
where
    I: IntoIterator<Item = (ZoneId, u32)>,
{
    let mut night_counts: BTreeMap<ZoneId, usize> = BTreeMap::new();
    let mut all_counts: BTreeMap<ZoneId, usize> = BTreeMap::new();
    for (zone, hour) in observations {
        if night.contains(hour) {
            *night_counts.entry(zone.clone()).or_default() += 1;
        }
        *all_counts.entry(zone).or_default() += 1;
    }
    let counts = if night_counts.is_empty() {
        all_counts
    } else {
        night_counts
    };
    // BTreeMap iterates ascending, so keeping the first strict maximum
    // resolves ties toward the smallest id.
    let mut best: Option<(ZoneId, usize)> = None;
    for (zone, n) in counts {
        if best.as_ref().is_none_or(|b| n > b.1) {
            best = Some((zone, n));
        }
    }
    best.map(|b| b.0)
}

pub fn infer_home(trace: &Trace, grid: &ZoneGrid, night: NightWindow) -> Result<ZoneId> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let obs = trace
        .fixes()
        .iter()
        .map(|f| Ok((zone_with_context(trace.user_id(), f, grid)?, f.t.hour_of_day())))
        .collect::<Result<Vec<_>>>()?;
    Ok(modal_zone(obs, night).expect("non-empty trace"))
}

/// Home inference on one user's Level 1 records; each record's hour is the
/// hour at which its time bin starts.
pub fn infer_home_coarse<'a, I>(records: I, temporal: TemporalResolution, night: NightWindow) -> Result<ZoneId>
where
    I: IntoIterator<Item = &'a CoarsePing>,
{
    modal_zone(
        records
            .into_iter()
            .map(|r| (r.zone.clone(), temporal.bin_start(r.time_bin).hour_of_day())),
        night,
    )
    .ok_or(Error::EmptyTrace)
}

pub fn infer_homes(traces: &[Trace], grid: &ZoneGrid, night: NightWindow) -> Result<Vec<ZoneId>> {
    traces
        .par_iter()
        .map(|tr| infer_home(tr, grid, night))
        .collect()
}

fn zone_with_context(user: &str, f: &crate::model::Fix, grid: &ZoneGrid) -> Result<ZoneId> {
    grid.zone_of(f.point).map_err(|_| Error::PingOutOfBounds {
        user_id: user.to_string(),
        t: f.t.0,
        lat: f.point.lat(),
        lon: f.point.lon(),
    })
}

fn dedup_consecutive<T: PartialEq>(mut v: Vec<T>) -> Vec<T> {
    v.dedup();
    v
}

/// Level 1: one row per ping, consecutive duplicates within a user collapsed.
/// Rows are ordered by input trace, then time.
pub fn to_level1(traces: &[Trace], cfg: &AggregationConfig) -> Result<Vec<CoarsePing>> {
    let per_user = traces
        .par_iter()
        .map(|tr| {
            let rows = tr
                .fixes()
                .iter()
                .map(|f| {
                    Ok(CoarsePing {
                        user_id: tr.user_id().to_string(),
                        zone: zone_with_context(tr.user_id(), f, &cfg.grid)?,
                        time_bin: time_bin(f.t, cfg.temporal),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(dedup_consecutive(rows))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_user.into_iter().flatten().collect())
}

/// Traces that survive `min_cohort` suppression, paired with their home zones.
fn cohorts<'a>(traces: &'a [Trace], cfg: &AggregationConfig) -> Result<Vec<(&'a Trace, ZoneId)>> {
    let homes = infer_homes(traces, &cfg.grid, cfg.night)?;
    let mut sizes: HashMap<&ZoneId, usize> = HashMap::new();
    for h in &homes {
        *sizes.entry(h).or_default() += 1;
    }
    let min = cfg.min_cohort.unwrap_or(0);
    let keep: Vec<bool> = homes.iter().map(|h| sizes[h] >= min).collect();
    Ok(traces
        .iter()
        .zip(homes.iter().cloned())
        .zip(keep)
        .filter_map(|(pair, k)| k.then_some(pair))
        .collect())
}

/// Level 2: each ping becomes (home zone, point, bin), sorted by
/// (home_zone, time_bin, lat, lon).
pub fn to_level2(traces: &[Trace], cfg: &AggregationConfig) -> Result<Vec<AggPing>> {
    let mut rows: Vec<AggPing> = cohorts(traces, cfg)?
        .into_par_iter()
        .flat_map_iter(|(tr, home)| {
            tr.fixes().iter().map(move |f| AggPing {
                home_zone: home.clone(),
                point: f.point,
                time_bin: time_bin(f.t, cfg.temporal),
            })
        })
        .collect();
    rows.par_sort_unstable_by(|a, b| {
        a.home_zone
            .cmp(&b.home_zone)
            .then(a.time_bin.cmp(&b.time_bin))
            .then(a.point.total_cmp(&b.point))
    });
    Ok(rows)
}

fn sort_dedup_level3(mut rows: Vec<CoarseAggPing>) -> Vec<CoarseAggPing> {
    rows.par_sort_unstable();
    dedup_consecutive(rows)
}

/// Level 3: each ping becomes (home zone, visited zone, bin), sorted by
/// (home_zone, visit_zone, time_bin) with consecutive duplicates collapsed.
pub fn to_level3(traces: &[Trace], cfg: &AggregationConfig) -> Result<Vec<CoarseAggPing>> {
    let rows = cohorts(traces, cfg)?
        .into_par_iter()
        .map(|(tr, home)| {
            tr.fixes()
                .iter()
                .map(|f| {
                    Ok(CoarseAggPing {
                        home_zone: home.clone(),
                        visit_zone: zone_with_context(tr.user_id(), f, &cfg.grid)?,
                        time_bin: time_bin(f.t, cfg.temporal),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sort_dedup_level3(rows.into_iter().flatten().collect()))
}

/// Spatially coarsens Level 2 rows into Level 3 rows on `grid`.
pub fn coarsen_level2(rows: &[AggPing], grid: &ZoneGrid) -> Result<Vec<CoarseAggPing>> {
    let out = rows
        .iter()
        .map(|r| {
            Ok(CoarseAggPing {
                home_zone: r.home_zone.clone(),
                visit_zone: grid.zone_of(r.point)?,
                time_bin: r.time_bin,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sort_dedup_level3(out))
}

/// Output of a level transform.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelData {
    Raw(Vec<Trace>),
    Coarse(Vec<CoarsePing>),
    Aggregated(Vec<AggPing>),
    CoarseAggregated(Vec<CoarseAggPing>),
}

impl LevelData {
    pub fn level(&self) -> Level {
        match self {
            LevelData::Raw(_) => Level::Raw,
            LevelData::Coarse(_) => Level::Coarse,
            LevelData::Aggregated(_) => Level::Aggregated,
            LevelData::CoarseAggregated(_) => Level::CoarseAggregated,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LevelData::Raw(t) => t.iter().map(Trace::len).sum(),
            LevelData::Coarse(r) => r.len(),
            LevelData::Aggregated(r) => r.len(),
            LevelData::CoarseAggregated(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn apply(traces: &[Trace], cfg: &AggregationConfig) -> Result<LevelData> {
    Ok(match cfg.level {
        Level::Raw => LevelData::Raw(traces.to_vec()),
        Level::Coarse => LevelData::Coarse(to_level1(traces, cfg)?),
        Level::Aggregated => LevelData::Aggregated(to_level2(traces, cfg)?),
        Level::CoarseAggregated => LevelData::CoarseAggregated(to_level3(traces, cfg)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Fix, GeoPoint, Timestamp};

    fn grid() -> ZoneGrid {
        ZoneGrid::new(GeoPoint::new(41.80, -72.30).unwrap(), 0.01, 32, 32).unwrap()
    }

    fn cfg(level: Level) -> AggregationConfig {
        AggregationConfig::new(level, grid(), TemporalResolution::HOUR)
    }

    /// Fix at the center of grid cell (row, col) at time t.
    fn at(row: u32, col: u32, t: u64) -> Fix {
        Fix {
            point: grid().cell_centroid(row, col).unwrap(),
            t: Timestamp(t),
        }
    }

    fn night(h: u64) -> u64 {
        h * 3600 + 60
    }

    #[test]
    fn night_window_bounds() {
        let w = NightWindow::default();
        assert!(w.contains(20) && w.contains(23) && w.contains(0) && w.contains(3));
        assert!(!w.contains(4) && !w.contains(19) && !w.contains(12));
    }

    #[test]
    fn infer_home_examples() {
        let g = grid();
        let w = NightWindow::default();
        let single = Trace::new("a", vec![at(2, 2, 100), at(2, 2, night(13)), at(2, 2, night(21))]).unwrap();
        assert_eq!(infer_home(&single, &g, w).unwrap().as_str(), "r2_c2");

        let strict = Trace::new(
            "a",
            vec![at(1, 1, night(21)), at(1, 1, night(22)), at(1, 1, night(1)), at(5, 5, night(2)),
                 at(5, 5, night(12)), at(5, 5, night(13)), at(5, 5, night(14)), at(5, 5, night(15))],
        )
        .unwrap();
        assert_eq!(infer_home(&strict, &g, w).unwrap().as_str(), "r1_c1");

        let tie = Trace::new(
            "a",
            vec![at(1, 1, night(21)), at(1, 1, night(22)), at(0, 9, night(1)), at(0, 9, night(2))],
        )
        .unwrap();
        assert_eq!(infer_home(&tie, &g, w).unwrap().as_str(), "r0_c9");

        // no night pings: modal zone over everything
        let day_only = Trace::new("a", vec![at(3, 3, night(9)), at(4, 4, night(10)), at(4, 4, night(11))]).unwrap();
        assert_eq!(infer_home(&day_only, &g, w).unwrap().as_str(), "r4_c4");

        let empty = Trace::new("a", vec![]).unwrap();
        assert!(matches!(infer_home(&empty, &g, w), Err(Error::EmptyTrace)));
    }

    #[test]
    fn level1_examples() {
        let tr = Trace::new("a", vec![at(1, 1, 10), at(1, 1, 20), at(1, 1, 30), at(1, 1, 40)]).unwrap();
        let rows = to_level1(&[tr], &cfg(Level::Coarse)).unwrap();
        assert_eq!(rows.len(), 1);

        let straddle = Trace::new("a", vec![at(1, 1, 3599), at(1, 1, 3600)]).unwrap();
        let rows = to_level1(&[straddle], &cfg(Level::Coarse)).unwrap();
        assert_eq!(rows.iter().map(|r| r.time_bin).collect::<Vec<_>>(), vec![0, 1]);

        // separate visits keep their multiplicity
        let revisit = Trace::new("a", vec![at(1, 1, 10), at(2, 2, 20), at(1, 1, 30)]).unwrap();
        assert_eq!(to_level1(&[revisit], &cfg(Level::Coarse)).unwrap().len(), 3);
    }

    #[test]
    fn out_of_bounds_carries_context() {
        let bad = Trace::new(
            "zed",
            vec![Fix {
                point: GeoPoint::new(10.0, 10.0).unwrap(),
                t: Timestamp(77),
            }],
        )
        .unwrap();
        match to_level1(&[bad], &cfg(Level::Coarse)) {
            Err(Error::PingOutOfBounds { user_id, t, .. }) => {
                assert_eq!(user_id, "zed");
                assert_eq!(t, 77);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn level2_single_user_shares_home() {
        let tr = Trace::new("a", vec![at(1, 1, night(22)), at(4, 4, night(10)), at(1, 1, night(23))]).unwrap();
        let rows = to_level2(&[tr], &cfg(Level::Aggregated)).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.home_zone.as_str() == "r1_c1"));
    }

    #[test]
    fn level2_interleaves_cohort() {
        let g = grid();
        let base = g.cell_centroid(1, 1).unwrap();
        let off = |d: f64, t: u64| Fix {
            point: GeoPoint::new(base.lat() + d, base.lon()).unwrap(),
            t: Timestamp(t),
        };
        // both users live in r1_c1; a sits south of b but pings later in each bin
        let a = Trace::new("a", vec![off(-0.001, night(21) + 100), off(-0.001, night(22) + 100)]).unwrap();
        let b = Trace::new("b", vec![off(0.001, night(21)), off(0.001, night(22))]).unwrap();
        let rows = to_level2(&[a.clone(), b.clone()], &cfg(Level::Aggregated)).unwrap();
        let lats: Vec<f64> = rows.iter().map(|r| r.point.lat()).collect();
        // rows alternate a, b, a, b: neither user's rows are contiguous
        assert!(lats[0] < lats[1] && lats[2] < lats[3] && lats[1] > lats[2]);
        // swapping the input order gives identical output
        assert_eq!(rows, to_level2(&[b, a], &cfg(Level::Aggregated)).unwrap());
    }

    #[test]
    fn level3_stationary_and_composition() {
        let home_only = Trace::new("a", vec![at(2, 2, 10), at(2, 2, night(5)), at(2, 2, night(30))]).unwrap();
        let rows = to_level3(&[home_only], &cfg(Level::CoarseAggregated)).unwrap();
        assert!(rows.iter().all(|r| r.home_zone == r.visit_zone));

        let traces: Vec<Trace> = (0..5)
            .map(|u| {
                Trace::new(
                    format!("u{u}"),
                    vec![at(u % 2, 0, night(21)), at(3, u, night(9)), at(u % 2, 0, night(23)), at(3, u, night(33))],
                )
                .unwrap()
            })
            .collect();
        let c3 = cfg(Level::CoarseAggregated);
        let l3 = to_level3(&traces, &c3).unwrap();
        let l2 = to_level2(&traces, &cfg(Level::Aggregated)).unwrap();
        assert_eq!(l3, coarsen_level2(&l2, &c3.grid).unwrap());
    }

    #[test]
    fn min_cohort_suppresses_small_zones() {
        let a = Trace::new("a", vec![at(1, 1, night(22))]).unwrap();
        let b = Trace::new("b", vec![at(1, 1, night(23))]).unwrap();
        let c = Trace::new("c", vec![at(7, 7, night(22))]).unwrap();
        let mut c2 = cfg(Level::Aggregated);
        c2.min_cohort = Some(2);
        let rows = to_level2(&[a, b, c], &c2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.home_zone.as_str() == "r1_c1"));
    }
}
