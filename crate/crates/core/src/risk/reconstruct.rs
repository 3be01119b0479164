//! Trajectory reconstruction from de-linked Level 2 / Level 3 records.
//!
//! Within each home-zone cohort the attack seeds one candidate per user at
//! the cohort's most frequent night locations, then walks the time bins in
//! order. In every bin the candidates are linked to that bin's observations
//! by a minimum-cost assignment, where the cost of a pairing is the distance
//! from the observation to the nearest place the candidate has already been
//! (people return to the same few places). Observations left over (a user seen
//! in several places within one bin) join the nearest candidate that could
//! have reached them, or open a new partial candidate otherwise.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::aggregate::NightWindow;
use crate::error::{Error, Result};
use crate::model::{
    haversine_distance, time_bin, AggPing, CoarseAggPing, GeoPoint, TemporalResolution, Trace,
    ZoneGrid, ZoneId,
};
use crate::risk::assignment::{greedy_assignment, min_cost_assignment, CostMatrix};

#[derive(Debug, Clone, Copy)]
pub enum AggregatedRecords<'a> {
    /// Level 2: precise points.
    Points(&'a [AggPing]),
    /// Level 3: visited zones.
    Zones(&'a [CoarseAggPing]),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CohortSizes {
    /// Users per home zone, e.g. published alongside the aggregate. Zones
    /// missing from the map fall back to night occupancy.
    Known(BTreeMap<ZoneId, usize>),
    /// Maximum number of distinct observations in any night bin.
    NightOccupancy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructConfig {
    pub grid: ZoneGrid,
    pub temporal: TemporalResolution,
    pub night: NightWindow,
    pub cohort_sizes: CohortSizes,
    /// Level 2 pings of one bin closer than this merge into one observation.
    pub cluster_radius_m: f64,
    /// Fastest plausible movement when attaching leftover observations.
    pub max_speed_mps: f64,
    /// Bins with more candidates or observations than this use greedy
    /// nearest-pair linking instead of optimal assignment.
    pub greedy_above: usize,
}

impl ReconstructConfig {
    pub fn new(grid: ZoneGrid, temporal: TemporalResolution, cohort_sizes: CohortSizes) -> Self {
        Self {
            grid,
            temporal,
            night: NightWindow::default(),
            cohort_sizes,
            cluster_radius_m: 100.0,
            max_speed_mps: 15.0,
            greedy_above: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateStep {
    pub time_bin: u64,
    pub zone: ZoneId,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub home_zone: ZoneId,
    /// Opened mid-run for an unreachable observation rather than seeded.
    pub partial: bool,
    /// Ordered by bin; at most one step per (zone, bin).
    pub steps: Vec<CandidateStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub candidates: Vec<Candidate>,
    /// Cohorts skipped because their size was zero.
    pub empty_cohorts: usize,
    /// Whether any bin fell back to greedy linking.
    pub greedy_fallback: bool,
}

#[derive(Debug, Clone)]
struct Observation {
    point: GeoPoint,
    zone: ZoneId,
    weight: usize,
}

/// Leader clustering in input order: a point joins the first cluster whose
/// leader is within `radius_m`.
fn cluster_points(points: &[GeoPoint], radius_m: f64, grid: &ZoneGrid) -> Result<Vec<Observation>> {
    let mut clusters: Vec<(GeoPoint, Vec<GeoPoint>)> = Vec::new();
    for &p in points {
        match clusters
            .iter_mut()
            .find(|(leader, _)| haversine_distance(*leader, p) <= radius_m)
        {
            Some((_, members)) => members.push(p),
            None => clusters.push((p, vec![p])),
        }
    }
    clusters
        .into_iter()
        .map(|(_, members)| {
            let n = members.len() as f64;
            let lat = members.iter().map(|p| p.lat()).sum::<f64>() / n;
            let lon = members.iter().map(|p| p.lon()).sum::<f64>() / n;
            let mut counts: BTreeMap<ZoneId, usize> = BTreeMap::new();
            for m in &members {
                *counts.entry(grid.zone_of(*m)?).or_default() += 1;
            }
            let mut zone = None;
            for (z, c) in counts {
                if zone.as_ref().is_none_or(|(_, best)| c > *best) {
                    zone = Some((z, c));
                }
            }
            Ok(Observation {
                point: GeoPoint::new(lat, lon)?,
                zone: zone.expect("non-empty cluster").0,
                weight: members.len(),
            })
        })
        .collect()
}

type Cohort = BTreeMap<u64, Vec<Observation>>;

fn group_cohorts(records: AggregatedRecords<'_>, cfg: &ReconstructConfig) -> Result<BTreeMap<ZoneId, Cohort>> {
    let mut out: BTreeMap<ZoneId, Cohort> = BTreeMap::new();
    match records {
        AggregatedRecords::Points(rows) => {
            let mut raw: BTreeMap<(ZoneId, u64), Vec<GeoPoint>> = BTreeMap::new();
            for r in rows {
                raw.entry((r.home_zone.clone(), r.time_bin)).or_default().push(r.point);
            }
            for ((home, bin), mut pts) in raw {
                pts.sort_by(|a, b| a.total_cmp(b));
                let obs = cluster_points(&pts, cfg.cluster_radius_m, &cfg.grid)?;
                out.entry(home).or_default().insert(bin, obs);
            }
        }
        AggregatedRecords::Zones(rows) => {
            for r in rows {
                let bin = out.entry(r.home_zone.clone()).or_default().entry(r.time_bin).or_default();
                if bin.iter().any(|o| o.zone == r.visit_zone) {
                    continue;
                }
                let point = cfg.grid.centroid(&r.visit_zone).ok_or_else(|| {
                    Error::InvalidConfig(format!("zone {} is not a cell of the grid", r.visit_zone))
                })?;
                bin.push(Observation {
                    point,
                    zone: r.visit_zone.clone(),
                    weight: 1,
                });
            }
            for cohort in out.values_mut() {
                for obs in cohort.values_mut() {
                    obs.sort_by(|a, b| a.zone.cmp(&b.zone));
                }
            }
        }
    }
    Ok(out)
}

fn is_night_bin(bin: u64, cfg: &ReconstructConfig) -> bool {
    cfg.night.contains(cfg.temporal.bin_start(bin).hour_of_day())
}

fn night_bins<'c>(cohort: &'c Cohort, cfg: &ReconstructConfig) -> Vec<&'c Vec<Observation>> {
    let night: Vec<_> = cohort
        .iter()
        .filter(|(b, _)| is_night_bin(**b, cfg))
        .map(|(_, o)| o)
        .collect();
    if night.is_empty() {
        cohort.values().collect()
    } else {
        night
    }
}

fn estimate_size(cohort: &Cohort, cfg: &ReconstructConfig) -> usize {
    night_bins(cohort, cfg)
        .iter()
        .map(|o| o.len())
        .max()
        .unwrap_or(0)
        .max(1)
}

/// Night sites ordered by total weight, heaviest first.
fn seed_sites(cohort: &Cohort, cfg: &ReconstructConfig) -> Vec<GeoPoint> {
    // (anchor point, zone, weight)
    let mut sites: Vec<(GeoPoint, ZoneId, usize)> = Vec::new();
    for obs in night_bins(cohort, cfg).into_iter().flatten() {
        match sites.iter_mut().find(|(p, z, _)| {
            *z == obs.zone && haversine_distance(*p, obs.point) <= cfg.cluster_radius_m
        }) {
            Some(site) => site.2 += obs.weight,
            None => sites.push((obs.point, obs.zone.clone(), obs.weight)),
        }
    }
    sites.sort_by(|a, b| b.2.cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.total_cmp(&b.0)));
    sites.into_iter().map(|s| s.0).collect()
}

struct Track {
    pos: GeoPoint,
    /// Distinct places the track has been matched to, seed site included.
    sites: Vec<GeoPoint>,
    last_bin: Option<u64>,
    partial: bool,
    steps: Vec<CandidateStep>,
}

impl Track {
    fn new(pos: GeoPoint, last_bin: Option<u64>, partial: bool) -> Self {
        Self {
            pos,
            sites: vec![pos],
            last_bin,
            partial,
            steps: Vec::new(),
        }
    }

    /// Distance from `p` to the closest known site or the current position.
    fn affinity(&self, p: GeoPoint) -> f64 {
        self.sites
            .iter()
            .map(|s| haversine_distance(*s, p))
            .fold(haversine_distance(self.pos, p), f64::min)
    }

    fn move_to(&mut self, p: GeoPoint, radius_m: f64) {
        self.pos = p;
        if self.sites.iter().all(|s| haversine_distance(*s, p) > radius_m) {
            self.sites.push(p);
        }
    }

    fn push(&mut self, bin: u64, obs: &Observation) {
        let dup = self
            .steps
            .iter()
            .rev()
            .take_while(|s| s.time_bin == bin)
            .any(|s| s.zone == obs.zone);
        if !dup {
            self.steps.push(CandidateStep {
                time_bin: bin,
                zone: obs.zone.clone(),
                point: obs.point,
            });
        }
    }
}

fn cell_diagonal_m(grid: &ZoneGrid) -> f64 {
    let o = grid.origin();
    let far = GeoPoint::new(
        (o.lat() + grid.cell_deg()).min(90.0),
        (o.lon() + grid.cell_deg()).min(179.999_999),
    )
    .unwrap_or(o);
    haversine_distance(o, far)
}

fn link_cohort(cohort: &Cohort, size: usize, cfg: &ReconstructConfig) -> (Vec<Track>, bool) {
    let sites = seed_sites(cohort, cfg);
    let mut tracks: Vec<Track> = (0..size)
        .map(|i| Track::new(sites[i % sites.len()], None, false))
        .collect();
    let bin_s = cfg.temporal.bin_seconds() as f64;
    let slack = cell_diagonal_m(&cfg.grid) + 4.0 * cfg.cluster_radius_m;
    let mut greedy = false;

    for (&bin, obs) in cohort {
        let cost = CostMatrix::from_fn(tracks.len(), obs.len(), |i, j| tracks[i].affinity(obs[j].point));
        let assignment = if tracks.len() > cfg.greedy_above || obs.len() > cfg.greedy_above {
            greedy = true;
            greedy_assignment(&cost)
        } else {
            min_cost_assignment(&cost)
        };
        let mut taken = vec![false; obs.len()];
        let mut matched_now = vec![false; tracks.len()];
        for (i, j) in assignment.iter().enumerate() {
            if let Some(j) = *j {
                taken[j] = true;
                matched_now[i] = true;
                tracks[i].push(bin, &obs[j]);
                tracks[i].move_to(obs[j].point, cfg.cluster_radius_m);
            }
        }
        for o in obs.iter().zip(&taken).filter(|(_, t)| !**t).map(|(o, _)| o) {
            let nearest = tracks
                .iter()
                .enumerate()
                .map(|(i, t)| (i, t.affinity(o.point)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let reachable = nearest.filter(|&(i, d)| {
                let window = if i < matched_now.len() && matched_now[i] {
                    bin_s
                } else {
                    match tracks[i].last_bin {
                        Some(lb) => (bin - lb) as f64 * bin_s,
                        None => f64::INFINITY,
                    }
                };
                d <= cfg.max_speed_mps * window + slack
            });
            match reachable {
                Some((i, _)) => tracks[i].push(bin, o),
                None => {
                    let mut t = Track::new(o.point, Some(bin), true);
                    t.push(bin, o);
                    tracks.push(t);
                }
            }
        }
        for (i, m) in matched_now.iter().enumerate() {
            if *m {
                tracks[i].last_bin = Some(bin);
            }
        }
    }
    (tracks, greedy)
}

pub fn reconstruct(records: AggregatedRecords<'_>, cfg: &ReconstructConfig) -> Result<Reconstruction> {
    let cohorts = group_cohorts(records, cfg)?;
    // per cohort: its tracks and whether greedy linking was needed, or None
    // when the cohort is empty
    type Linked = (ZoneId, Option<(Vec<Track>, bool)>);
    let linked: Vec<Linked> = cohorts
        .into_par_iter()
        .map(|(home, cohort)| {
            let size = match &cfg.cohort_sizes {
                CohortSizes::Known(m) => m.get(&home).copied().unwrap_or_else(|| estimate_size(&cohort, cfg)),
                CohortSizes::NightOccupancy => estimate_size(&cohort, cfg),
            };
            if size == 0 || cohort.is_empty() {
                return (home, None);
            }
            let linked = link_cohort(&cohort, size, cfg);
            (home, Some(linked))
        })
        .collect();

    let mut out = Reconstruction {
        candidates: Vec::new(),
        empty_cohorts: 0,
        greedy_fallback: false,
    };
    for (home, linked) in linked {
        let Some((tracks, greedy)) = linked else {
            log::warn!("skipping empty cohort {home}");
            out.empty_cohorts += 1;
            continue;
        };
        out.greedy_fallback |= greedy;
        for t in tracks {
            out.candidates.push(Candidate {
                id: out.candidates.len(),
                home_zone: home.clone(),
                partial: t.partial,
                steps: t.steps,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// Fraction of candidate steps whose (zone, bin) the matched user visited.
    pub per_step: f64,
    /// Fraction of non-empty candidates whose every step is correct.
    pub exact_match_rate: f64,
    pub n_candidates: usize,
    pub n_steps: usize,
    pub correct_steps: usize,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut cur = x;
        while self.0[cur] != root {
            let next = self.0[cur];
            self.0[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Scores candidates against true traces discretized on (grid, temporal).
/// Candidates and users are paired one-to-one to maximize total overlap;
/// unpaired candidates score zero.
pub fn reconstruction_accuracy(
    candidates: &[Candidate],
    truth: &[Trace],
    grid: &ZoneGrid,
    temporal: TemporalResolution,
) -> Result<AccuracyReport> {
    let mut zone_ids: HashMap<ZoneId, u64> = HashMap::new();
    let mut intern = |z: ZoneId| -> u64 {
        let next = zone_ids.len() as u64;
        *zone_ids.entry(z).or_insert(next)
    };
    let mut index: HashMap<u64, Vec<usize>> = HashMap::new();
    for (u, tr) in truth.iter().enumerate() {
        let mut keys: Vec<u64> = Vec::with_capacity(tr.len());
        for f in tr.fixes() {
            keys.push((intern(grid.zone_of(f.point)?) << 32) | time_bin(f.t, temporal));
        }
        keys.sort_unstable();
        keys.dedup();
        for k in keys {
            index.entry(k).or_default().push(u);
        }
    }
    let cand_keys: Vec<Vec<u64>> = candidates
        .iter()
        .map(|c| {
            let mut keys: Vec<u64> = c
                .steps
                .iter()
                .map(|s| (intern(s.zone.clone()) << 32) | s.time_bin)
                .collect();
            keys.sort_unstable();
            keys.dedup();
            keys
        })
        .collect();
    let n_steps: usize = cand_keys.iter().map(Vec::len).sum();
    let non_empty = cand_keys.iter().filter(|k| !k.is_empty()).count();
    if n_steps == 0 {
        return Ok(AccuracyReport {
            per_step: 0.0,
            exact_match_rate: 0.0,
            n_candidates: candidates.len(),
            n_steps: 0,
            correct_steps: 0,
        });
    }

    let overlaps: Vec<HashMap<usize, usize>> = cand_keys
        .par_iter()
        .map(|keys| {
            let mut m: HashMap<usize, usize> = HashMap::new();
            for k in keys {
                for &u in index.get(k).map_or(&[][..], Vec::as_slice) {
                    *m.entry(u).or_default() += 1;
                }
            }
            m
        })
        .collect();

    let n_c = candidates.len();
    let mut uf = UnionFind((0..n_c + truth.len()).collect());
    for (c, m) in overlaps.iter().enumerate() {
        for &u in m.keys() {
            uf.union(c, n_c + u);
        }
    }
    let mut components: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (c, m) in overlaps.iter().enumerate() {
        if !m.is_empty() {
            components.entry(uf.find(c)).or_default().0.push(c);
        }
    }
    for u in 0..truth.len() {
        let root = uf.find(n_c + u);
        if let Some(comp) = components.get_mut(&root) {
            comp.1.push(u);
        }
    }

    let scored: Vec<Vec<(usize, usize)>> = components
        .into_values()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(cands, users)| {
            let cost = CostMatrix::from_fn(cands.len(), users.len(), |i, j| {
                -(overlaps[cands[i]].get(&users[j]).copied().unwrap_or(0) as f64)
            });
            min_cost_assignment(&cost)
                .into_iter()
                .enumerate()
                .filter_map(|(i, j)| {
                    j.map(|j| (cands[i], overlaps[cands[i]].get(&users[j]).copied().unwrap_or(0)))
                })
                .collect()
        })
        .collect();

    let mut correct = 0;
    let mut exact = 0;
    for (c, hits) in scored.into_iter().flatten() {
        correct += hits;
        if hits == cand_keys[c].len() {
            exact += 1;
        }
    }
    Ok(AccuracyReport {
        per_step: correct as f64 / n_steps as f64,
        exact_match_rate: exact as f64 / non_empty as f64,
        n_candidates: candidates.len(),
        n_steps,
        correct_steps: correct,
    })
}

/// Known cohort sizes from home zones inferred on the true traces.
pub fn cohort_sizes_from_homes<'a, I>(homes: I) -> CohortSizes
where
    I: IntoIterator<Item = &'a ZoneId>,
{
    let mut m = BTreeMap::new();
    for h in homes {
        *m.entry(h.clone()).or_insert(0) += 1;
    }
    CohortSizes::Known(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{to_level2, to_level3, AggregationConfig, Level};
    use crate::model::{Fix, Timestamp};

    fn grid() -> ZoneGrid {
        ZoneGrid::new(GeoPoint::new(41.80, -72.30).unwrap(), 0.01, 32, 32).unwrap()
    }

    fn cell(r: u32, c: u32) -> GeoPoint {
        grid().cell_centroid(r, c).unwrap()
    }

    fn offset(p: GeoPoint, dlat: f64) -> GeoPoint {
        GeoPoint::new(p.lat() + dlat, p.lon()).unwrap()
    }

    /// A user who sleeps at `home` and spends 09:00-17:00 at `day` for two days,
    /// with one ping per hour.
    fn commuter(id: &str, home: GeoPoint, day: GeoPoint) -> Trace {
        let fixes = (0..48u64)
            .map(|h| {
                let hod = h % 24;
                let p = if (9..17).contains(&hod) { day } else { home };
                Fix {
                    point: p,
                    t: Timestamp(h * 3600 + 120),
                }
            })
            .collect();
        Trace::new(id, fixes).unwrap()
    }

    fn run(traces: &[Trace], level: Level) -> (Reconstruction, AccuracyReport) {
        let agg = AggregationConfig::new(level, grid(), TemporalResolution::HOUR);
        let homes: Vec<ZoneId> = traces
            .iter()
            .map(|t| crate::aggregate::infer_home(t, &agg.grid, agg.night).unwrap())
            .collect();
        let cfg = ReconstructConfig::new(grid(), TemporalResolution::HOUR, cohort_sizes_from_homes(&homes));
        let rec = match level {
            Level::Aggregated => {
                let rows = to_level2(traces, &agg).unwrap();
                reconstruct(AggregatedRecords::Points(&rows), &cfg).unwrap()
            }
            _ => {
                let rows = to_level3(traces, &agg).unwrap();
                reconstruct(AggregatedRecords::Zones(&rows), &cfg).unwrap()
            }
        };
        let acc = reconstruction_accuracy(&rec.candidates, traces, &grid(), TemporalResolution::HOUR).unwrap();
        (rec, acc)
    }

    #[test]
    fn singleton_cohort_is_exact() {
        let tr = commuter("a", cell(1, 1), cell(9, 9));
        for level in [Level::Aggregated, Level::CoarseAggregated] {
            let (rec, acc) = run(std::slice::from_ref(&tr), level);
            assert_eq!(rec.candidates.len(), 1);
            assert_eq!(acc.per_step, 1.0);
            assert_eq!(acc.exact_match_rate, 1.0);
            let steps: Vec<(String, u64)> = rec.candidates[0]
                .steps
                .iter()
                .map(|s| (s.zone.to_string(), s.time_bin))
                .collect();
            let expected: Vec<(String, u64)> = tr
                .fixes()
                .iter()
                .map(|f| (grid().zone_of(f.point).unwrap().to_string(), f.t.0 / 3600))
                .collect();
            assert_eq!(steps, expected);
        }
    }

    #[test]
    fn separated_pair_is_exact() {
        let traces = vec![
            commuter("a", cell(1, 1), cell(2, 2)),
            commuter("b", cell(20, 20), cell(25, 25)),
        ];
        for level in [Level::Aggregated, Level::CoarseAggregated] {
            assert_eq!(run(&traces, level).1.per_step, 1.0);
        }
    }

    #[test]
    fn co_homed_pair_level2_beats_level3() {
        // same home zone, distinct home points, day locations that cross
        let h = cell(5, 5);
        let traces = vec![
            commuter("a", offset(h, -0.003), cell(5, 30)),
            commuter("b", offset(h, 0.003), cell(5, 0)),
        ];
        let (_, l2) = run(&traces, Level::Aggregated);
        let (_, l3) = run(&traces, Level::CoarseAggregated);
        assert_eq!(l2.per_step, 1.0);
        assert!(l3.per_step <= l2.per_step);
    }

    #[test]
    fn accuracy_swap_fixture() {
        let (x, y) = (ZoneId::grid(0, 0), ZoneId::grid(0, 1));
        let at = |z: &ZoneId, b: u64| Fix {
            point: grid().centroid(z).unwrap(),
            t: Timestamp(b * 3600),
        };
        // a: x in even bins, y in odd; b the opposite
        let a = Trace::new("a", (0..6).map(|b| at(if b % 2 == 0 { &x } else { &y }, b)).collect()).unwrap();
        let b = Trace::new("b", (0..6).map(|b| at(if b % 2 == 0 { &y } else { &x }, b)).collect()).unwrap();
        let cand = |id, z: &ZoneId| Candidate {
            id,
            home_zone: x.clone(),
            partial: false,
            steps: (0..6)
                .map(|b| CandidateStep {
                    time_bin: b,
                    zone: z.clone(),
                    point: grid().centroid(z).unwrap(),
                })
                .collect(),
        };
        let cands = vec![cand(0, &x), cand(1, &y)];
        let acc = reconstruction_accuracy(&cands, &[a, b], &grid(), TemporalResolution::HOUR).unwrap();
        assert_eq!(acc.per_step, 0.5);
        assert_eq!(acc.exact_match_rate, 0.0);
    }

    #[test]
    fn accuracy_edge_cases() {
        let tr = commuter("a", cell(1, 1), cell(9, 9));
        let empty = reconstruction_accuracy(&[], std::slice::from_ref(&tr), &grid(), TemporalResolution::HOUR).unwrap();
        assert_eq!(empty.per_step, 0.0);

        // a perfect copy of the truth scores 1.0
        let perfect = Candidate {
            id: 0,
            home_zone: ZoneId::grid(1, 1),
            partial: false,
            steps: tr
                .fixes()
                .iter()
                .map(|f| CandidateStep {
                    time_bin: f.t.0 / 3600,
                    zone: grid().zone_of(f.point).unwrap(),
                    point: f.point,
                })
                .collect(),
        };
        let acc = reconstruction_accuracy(&[perfect.clone(), perfect], &[tr], &grid(), TemporalResolution::HOUR).unwrap();
        // the second copy has no user left to pair with
        assert_eq!(acc.per_step, 0.5);
    }

    #[test]
    fn estimated_sizes_and_empty_cohorts() {
        let traces = vec![commuter("a", cell(1, 1), cell(9, 9))];
        let agg = AggregationConfig::new(Level::CoarseAggregated, grid(), TemporalResolution::HOUR);
        let rows = to_level3(&traces, &agg).unwrap();
        let cfg = ReconstructConfig::new(grid(), TemporalResolution::HOUR, CohortSizes::NightOccupancy);
        let rec = reconstruct(AggregatedRecords::Zones(&rows), &cfg).unwrap();
        assert_eq!(rec.candidates.len(), 1);

        let mut zero = BTreeMap::new();
        zero.insert(ZoneId::grid(1, 1), 0);
        let cfg = ReconstructConfig::new(grid(), TemporalResolution::HOUR, CohortSizes::Known(zero));
        let rec = reconstruct(AggregatedRecords::Zones(&rows), &cfg).unwrap();
        assert!(rec.candidates.is_empty());
        assert_eq!(rec.empty_cohorts, 1);
    }

    #[test]
    fn greedy_fallback_flag() {
        let traces = vec![
            commuter("a", cell(1, 1), cell(9, 9)),
            commuter("b", offset(cell(1, 1), 0.002), cell(9, 12)),
        ];
        let agg = AggregationConfig::new(Level::Aggregated, grid(), TemporalResolution::HOUR);
        let rows = to_level2(&traces, &agg).unwrap();
        let mut cfg = ReconstructConfig::new(grid(), TemporalResolution::HOUR, CohortSizes::NightOccupancy);
        cfg.greedy_above = 1;
        let rec = reconstruct(AggregatedRecords::Points(&rows), &cfg).unwrap();
        assert!(rec.greedy_fallback);
        cfg.greedy_above = 512;
        assert!(!reconstruct(AggregatedRecords::Points(&rows), &cfg).unwrap().greedy_fallback);
    }
}
