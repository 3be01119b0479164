//! p-point unicity: how often `p` known spatio-temporal points from a user's
//! own trace single that user out of the population.

use std::collections::HashMap;

use rand::Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{time_bin, CoarsePing, TemporalResolution, Trace, ZoneGrid, ZoneId};
use crate::seeding::rng_for;

// Stream id for target selection; trials use (user, trial) streams.
const TARGET_STREAM: u64 = u64::MAX;

/// Per-user sets of distinct (zone, time bin) points with an inverted index.
#[derive(Debug, Clone)]
pub struct PointSets {
    users: Vec<String>,
    zones: Vec<ZoneId>,
    /// Sorted, deduplicated point keys per user.
    sets: Vec<Vec<u64>>,
    postings: HashMap<u64, Vec<u32>>,
    /// Point key of every ping, per user in trace order, when built from
    /// traces.
    pings: Option<Vec<Vec<u64>>>,
}

fn key(zone: u32, bin: u64) -> u64 {
    debug_assert!(bin <= u32::MAX as u64);
    ((zone as u64) << 32) | bin
}

impl PointSets {
    /// Builds from `(user, points)` pairs; users keep their input order.
    pub fn new<I, P>(users: I) -> Self
    where
        I: IntoIterator<Item = (String, P)>,
        P: IntoIterator<Item = (ZoneId, u64)>,
    {
        Self::build(users, false)
    }

    fn build<I, P>(users: I, keep_pings: bool) -> Self
    where
        I: IntoIterator<Item = (String, P)>,
        P: IntoIterator<Item = (ZoneId, u64)>,
    {
        let mut pings = Vec::new();
        let mut zone_ids: HashMap<ZoneId, u32> = HashMap::new();
        let mut zones = Vec::new();
        let mut names = Vec::new();
        let mut sets = Vec::new();
        for (user, points) in users {
            let mut keys: Vec<u64> = points
                .into_iter()
                .map(|(z, bin)| {
                    let id = *zone_ids.entry(z.clone()).or_insert_with(|| {
                        zones.push(z);
                        (zones.len() - 1) as u32
                    });
                    key(id, bin)
                })
                .collect();
            if keep_pings {
                pings.push(keys.clone());
            }
            keys.sort_unstable();
            keys.dedup();
            names.push(user);
            sets.push(keys);
        }
        let mut postings: HashMap<u64, Vec<u32>> = HashMap::new();
        for (u, set) in sets.iter().enumerate() {
            for &k in set {
                postings.entry(k).or_default().push(u as u32);
            }
        }
        Self {
            users: names,
            zones,
            sets,
            postings,
            pings: keep_pings.then_some(pings),
        }
    }

    pub fn from_traces(traces: &[Trace], grid: &ZoneGrid, temporal: TemporalResolution) -> Result<Self> {
        let per_user = traces
            .par_iter()
            .map(|tr| {
                let pts = tr
                    .fixes()
                    .iter()
                    .map(|f| Ok((grid.zone_of(f.point)?, time_bin(f.t, temporal))))
                    .collect::<Result<Vec<_>>>()?;
                Ok((tr.user_id().to_string(), pts))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::build(per_user, true))
    }

    /// Groups Level 1 rows by user in order of first appearance.
    pub fn from_level1(rows: &[CoarsePing]) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut by_user: HashMap<&str, Vec<(ZoneId, u64)>> = HashMap::new();
        for r in rows {
            by_user
                .entry(r.user_id.as_str())
                .or_insert_with(|| {
                    order.push(r.user_id.clone());
                    Vec::new()
                })
                .push((r.zone.clone(), r.time_bin));
        }
        let users: Vec<(String, Vec<(ZoneId, u64)>)> = order
            .into_iter()
            .map(|u| {
                let pts = by_user.remove(u.as_str()).unwrap_or_default();
                (u, pts)
            })
            .collect();
        Self::new(users)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn user_id(&self, i: usize) -> &str {
        &self.users[i]
    }

    pub fn n_points(&self, i: usize) -> usize {
        self.sets[i].len()
    }

    /// Ping count of user `i`, when built from traces.
    pub fn n_pings(&self, i: usize) -> Option<usize> {
        self.pings.as_ref().map(|p| p[i].len())
    }

    /// The distinct (zone, bin) points of user `i`, in key order.
    pub fn points(&self, i: usize) -> Vec<(ZoneId, u64)> {
        self.sets[i]
            .iter()
            .map(|&k| (self.zones[(k >> 32) as usize].clone(), k & 0xFFFF_FFFF))
            .collect()
    }

    /// True iff `target` is the only user holding every key in `known`.
    fn singles_out(&self, target: usize, known: &[u64]) -> bool {
        let Some(shortest) = known
            .iter()
            .map(|k| &self.postings[k])
            .min_by_key(|p| p.len())
        else {
            return self.users.len() == 1;
        };
        let mut holders = 0;
        for &u in shortest {
            let set = &self.sets[u as usize];
            if known.iter().all(|k| set.binary_search(k).is_ok()) {
                holders += 1;
                if holders > 1 {
                    return false;
                }
            }
        }
        debug_assert!(shortest.contains(&(target as u32)));
        holders == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialMode {
    /// `trials_per_target` random p-subsets for each of `n_targets` users.
    Sampled,
    /// Every p-subset of every eligible user.
    Exhaustive,
    /// Like `Sampled`, but each trial draws `p` distinct pings of the target
    /// and knows the distinct points they fall in (possibly fewer than `p`).
    /// The draws depend only on the seed, the user and the ping count, so
    /// every resolution of the same traces sees the same pings, and a
    /// coarser nested resolution can only enlarge anonymity sets. Needs
    /// point sets built with [`PointSets::from_traces`].
    TracePings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnicityConfig {
    pub p: usize,
    pub n_targets: usize,
    pub trials_per_target: usize,
    pub seed: u64,
    pub mode: TrialMode,
}

impl UnicityConfig {
    pub fn sampled(p: usize, n_targets: usize, trials_per_target: usize, seed: u64) -> Self {
        Self {
            p,
            n_targets,
            trials_per_target,
            seed,
            mode: TrialMode::Sampled,
        }
    }

    pub fn trace_pings(p: usize, n_targets: usize, trials_per_target: usize, seed: u64) -> Self {
        Self {
            mode: TrialMode::TracePings,
            ..Self::sampled(p, n_targets, trials_per_target, seed)
        }
    }

    pub fn exhaustive(p: usize) -> Self {
        Self {
            p,
            n_targets: 0,
            trials_per_target: 0,
            seed: 0,
            mode: TrialMode::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetOutcome {
    pub user: usize,
    pub successes: u64,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnicityEstimate {
    /// Mean over targets of each target's success fraction.
    pub value: f64,
    pub per_target: Vec<TargetOutcome>,
}

impl UnicityEstimate {
    pub fn total_trials(&self) -> u64 {
        self.per_target.iter().map(|t| t.trials).sum()
    }

    /// Binomial standard error of `value`.
    pub fn std_error(&self) -> f64 {
        let n = self.total_trials().max(1) as f64;
        (self.value * (1.0 - self.value) / n).sqrt()
    }

    fn from_outcomes(per_target: Vec<TargetOutcome>) -> Self {
        let value = if per_target.is_empty() {
            0.0
        } else {
            per_target
                .iter()
                .map(|t| t.successes as f64 / t.trials as f64)
                .sum::<f64>()
                / per_target.len() as f64
        };
        Self { value, per_target }
    }
}

/// Unicity of `sets` for `cfg.p` known points.
///
/// Targets are drawn from users with at least `p` distinct points; users
/// with fewer are skipped. In sampled mode every trial draws its points from
/// its own `(seed, user, trial)` stream using a partial Fisher-Yates shuffle,
/// so the `p + 1` sample of a trial extends its `p` sample.
pub fn unicity(sets: &PointSets, cfg: &UnicityConfig) -> Result<UnicityEstimate> {
    if cfg.p == 0 {
        return Err(Error::InvalidConfig("p must be at least 1".into()));
    }
    if cfg.mode == TrialMode::TracePings && sets.pings.is_none() {
        return Err(Error::InvalidConfig(
            "ping-coupled sampling needs point sets built from traces".into(),
        ));
    }
    let eligible: Vec<usize> = (0..sets.n_users()).filter(|&u| is_eligible(sets, u, cfg)).collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientPoints(cfg.p));
    }
    let outcomes = match cfg.mode {
        TrialMode::Exhaustive => eligible
            .par_iter()
            .map(|&u| exhaustive_target(sets, u, cfg.p))
            .collect(),
        TrialMode::Sampled | TrialMode::TracePings => {
            if cfg.n_targets == 0 || cfg.n_targets > sets.n_users() {
                return Err(Error::InvalidConfig(format!(
                    "n_targets must be in 1..={}, got {}",
                    sets.n_users(),
                    cfg.n_targets
                )));
            }
            if cfg.trials_per_target == 0 {
                return Err(Error::InvalidConfig("trials_per_target must be positive".into()));
            }
            let targets = choose_targets(sets, cfg);
            targets
                .par_iter()
                .map(|&u| sampled_target(sets, u, cfg))
                .collect()
        }
    };
    Ok(UnicityEstimate::from_outcomes(outcomes))
}

/// A seeded permutation of all users filtered to eligible ones, truncated to
/// `n_targets`. The permutation does not depend on `p`.
fn choose_targets(sets: &PointSets, cfg: &UnicityConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sets.n_users()).collect();
    order.shuffle(&mut rng_for(cfg.seed, &[TARGET_STREAM]));
    order
        .into_iter()
        .filter(|&u| is_eligible(sets, u, cfg))
        .take(cfg.n_targets)
        .collect()
}

fn is_eligible(sets: &PointSets, user: usize, cfg: &UnicityConfig) -> bool {
    match cfg.mode {
        TrialMode::TracePings => sets.n_pings(user).unwrap_or(0) >= cfg.p,
        _ => sets.n_points(user) >= cfg.p,
    }
}

fn sampled_target(sets: &PointSets, user: usize, cfg: &UnicityConfig) -> TargetOutcome {
    let (points, dedup) = match (&sets.pings, cfg.mode) {
        (Some(pings), TrialMode::TracePings) => (&pings[user], true),
        _ => (&sets.sets[user], false),
    };
    let mut idx: Vec<usize> = (0..points.len()).collect();
    let mut known = Vec::with_capacity(cfg.p);
    let mut successes = 0;
    for trial in 0..cfg.trials_per_target {
        let mut rng = rng_for(cfg.seed, &[user as u64, trial as u64]);
        for i in 0..cfg.p {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        known.clear();
        known.extend(idx[..cfg.p].iter().map(|&i| points[i]));
        if dedup {
            known.sort_unstable();
            known.dedup();
        }
        if sets.singles_out(user, &known) {
            successes += 1;
        }
        // restore identity order so each trial starts from the same state
        idx.iter_mut().enumerate().for_each(|(i, x)| *x = i);
    }
    TargetOutcome {
        user,
        successes,
        trials: cfg.trials_per_target as u64,
    }
}

fn exhaustive_target(sets: &PointSets, user: usize, p: usize) -> TargetOutcome {
    let points = &sets.sets[user];
    let n = points.len();
    let mut comb: Vec<usize> = (0..p).collect();
    let mut known = vec![0u64; p];
    let (mut successes, mut trials) = (0, 0);
    loop {
        for (k, &i) in known.iter_mut().zip(&comb) {
            *k = points[i];
        }
        trials += 1;
        if sets.singles_out(user, &known) {
            successes += 1;
        }
        // next combination in lexicographic order
        let Some(pos) = (0..p).rev().find(|&i| comb[i] < n - p + i) else {
            break;
        };
        comb[pos] += 1;
        for i in pos + 1..p {
            comb[i] = comb[i - 1] + 1;
        }
    }
    TargetOutcome {
        user,
        successes,
        trials,
    }
}

/// Smallest `p` in `1..=max_p` whose unicity reaches `threshold`.
pub fn min_points_for(sets: &PointSets, base: &UnicityConfig, threshold: f64, max_p: usize) -> Result<Option<usize>> {
    for p in 1..=max_p {
        let cfg = UnicityConfig { p, ..base.clone() };
        match unicity(sets, &cfg) {
            Ok(est) if est.value >= threshold => return Ok(Some(p)),
            Ok(_) => {}
            Err(Error::InsufficientPoints(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    use crate::model::{Fix, GeoPoint, Timestamp};

    fn z(s: &str) -> ZoneId {
        ZoneId::new(s)
    }

    fn sets_of(users: &[(&str, &[(&str, u64)])]) -> PointSets {
        PointSets::new(users.iter().map(|(u, pts)| {
            (u.to_string(), pts.iter().map(|(zn, b)| (z(zn), *b)).collect::<Vec<_>>())
        }))
    }

    /// Enumerates every p-subset of every user's point set and checks every
    /// other user's set directly.
    fn oracle(users: &[(String, BTreeSet<(ZoneId, u64)>)], p: usize) -> Vec<(u64, u64)> {
        fn subsets<T: Clone>(items: &[T], p: usize) -> Vec<Vec<T>> {
            if p == 0 {
                return vec![vec![]];
            }
            if items.len() < p {
                return vec![];
            }
            let mut with: Vec<Vec<T>> = subsets(&items[1..], p - 1)
                .into_iter()
                .map(|mut s| {
                    s.insert(0, items[0].clone());
                    s
                })
                .collect();
            with.extend(subsets(&items[1..], p));
            with
        }
        users
            .iter()
            .filter(|(_, s)| s.len() >= p)
            .map(|(name, set)| {
                let items: Vec<_> = set.iter().cloned().collect();
                let all = subsets(&items, p);
                let ok = all
                    .iter()
                    .filter(|sub| {
                        users
                            .iter()
                            .filter(|(other, oset)| other != name && sub.iter().all(|x| oset.contains(x)))
                            .count()
                            == 0
                    })
                    .count();
                (ok as u64, all.len() as u64)
            })
            .collect()
    }

    #[test]
    fn singleton_population() {
        let s = sets_of(&[("a", &[("x", 1), ("y", 2)])]);
        let est = unicity(&s, &UnicityConfig::sampled(1, 1, 10, 3)).unwrap();
        assert_eq!(est.value, 1.0);
    }

    #[test]
    fn twins_are_never_unique() {
        let pts: &[(&str, u64)] = &[("x", 1), ("y", 2), ("z", 3)];
        let s = sets_of(&[("a", pts), ("b", pts)]);
        for p in 1..=3 {
            assert_eq!(unicity(&s, &UnicityConfig::sampled(p, 2, 20, 1)).unwrap().value, 0.0);
            assert_eq!(unicity(&s, &UnicityConfig::exhaustive(p)).unwrap().value, 0.0);
        }
    }

    #[test]
    fn three_user_fixture() {
        let s = sets_of(&[
            ("a", &[("x", 0), ("y", 0), ("z", 0)]),
            ("b", &[("x", 0), ("y", 0)]),
            ("c", &[("x", 0), ("w", 0)]),
        ]);
        let est = unicity(&s, &UnicityConfig::exhaustive(2)).unwrap();
        let outcomes: Vec<(u64, u64)> = est.per_target.iter().map(|t| (t.successes, t.trials)).collect();
        assert_eq!(outcomes, vec![(2, 3), (0, 1), (1, 1)]);
        assert!((est.value - (2.0 / 3.0 + 0.0 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn insufficient_points() {
        let s = sets_of(&[("a", &[("x", 0)]), ("b", &[("y", 0)])]);
        assert!(matches!(
            unicity(&s, &UnicityConfig::sampled(2, 2, 5, 0)),
            Err(Error::InsufficientPoints(2))
        ));
        assert!(unicity(&s, &UnicityConfig::sampled(1, 3, 5, 0)).is_err());
        assert!(unicity(&s, &UnicityConfig::sampled(0, 1, 5, 0)).is_err());
    }

    #[test]
    fn deterministic() {
        let s = sets_of(&[
            ("a", &[("x", 0), ("y", 1), ("z", 2), ("w", 3)]),
            ("b", &[("x", 0), ("y", 1), ("q", 2)]),
            ("c", &[("x", 0), ("w", 3), ("z", 2)]),
        ]);
        let cfg = UnicityConfig::sampled(2, 3, 40, 11);
        assert_eq!(unicity(&s, &cfg).unwrap(), unicity(&s, &cfg).unwrap());
    }

    #[test]
    fn min_points() {
        let s = sets_of(&[
            ("a", &[("x", 0), ("y", 0), ("z", 0)]),
            ("b", &[("x", 0), ("y", 0), ("q", 0)]),
        ]);
        // x and y are shared: unicity is 1/3 at p=1, 2/3 at p=2, 1 at p=3
        let base = UnicityConfig::exhaustive(1);
        assert_eq!(min_points_for(&s, &base, 0.95, 3).unwrap(), Some(3));
        assert_eq!(min_points_for(&s, &base, 0.6, 3).unwrap(), Some(2));
        let twins = sets_of(&[("a", &[("x", 0)]), ("b", &[("x", 0)])]);
        assert_eq!(min_points_for(&twins, &base, 0.95, 3).unwrap(), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn population() -> impl Strategy<Value = Vec<BTreeSet<(u8, u8)>>> {
            proptest::collection::vec(
                proptest::collection::btree_set((0u8..4, 0u8..4), 1..7),
                1..12,
            )
        }

        type Named = Vec<(String, BTreeSet<(ZoneId, u64)>)>;

        fn to_sets(pop: &[BTreeSet<(u8, u8)>]) -> (PointSets, Named) {
            let named: Named = pop
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    (
                        format!("u{i}"),
                        s.iter().map(|&(zn, b)| (ZoneId::grid(0, zn as u32), b as u64)).collect(),
                    )
                })
                .collect();
            let sets = PointSets::new(named.iter().map(|(n, s)| (n.clone(), s.iter().cloned().collect::<Vec<_>>())));
            (sets, named)
        }

        proptest! {
            #[test]
            fn exhaustive_matches_oracle(pop in population(), p in 1usize..4) {
                let (sets, named) = to_sets(&pop);
                let expected = oracle(&named, p);
                match unicity(&sets, &UnicityConfig::exhaustive(p)) {
                    Ok(est) => {
                        let got: Vec<(u64, u64)> = est.per_target.iter().map(|t| (t.successes, t.trials)).collect();
                        prop_assert_eq!(got, expected);
                    }
                    Err(Error::InsufficientPoints(_)) => prop_assert!(expected.is_empty()),
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }

            #[test]
            fn more_points_never_hurt(pop in population(), seed in 0u64..1000) {
                // every user needs p + 1 points for seed-aligned targets
                let pop: Vec<_> = pop.into_iter().filter(|s| s.len() >= 3).collect();
                prop_assume!(!pop.is_empty());
                let (sets, _) = to_sets(&pop);
                let n = sets.n_users();
                let u2 = unicity(&sets, &UnicityConfig::sampled(2, n, 10, seed)).unwrap();
                let u3 = unicity(&sets, &UnicityConfig::sampled(3, n, 10, seed)).unwrap();
                for (a, b) in u2.per_target.iter().zip(&u3.per_target) {
                    prop_assert_eq!(a.user, b.user);
                    prop_assert!(b.successes >= a.successes);
                }
                prop_assert!(u3.value >= u2.value);
            }

            #[test]
            fn ping_coupled_coarsening_never_helps(
                walks in prop::collection::vec(
                    prop::collection::vec((0u32..8, 0u32..8, 0u64..48), 1..15), 2..10),
                seed in 0u64..1000,
                p in 1usize..4,
            ) {
                let fine = ZoneGrid::new(GeoPoint::new(0.0, 0.0).unwrap(), 0.1, 8, 8).unwrap();
                let traces: Vec<Trace> = walks
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        let fixes = w
                            .iter()
                            .map(|&(r, c, h)| Fix {
                                point: fine.cell_centroid(r, c).unwrap(),
                                t: Timestamp(h * 1800),
                            })
                            .collect();
                        Trace::new(format!("u{i}"), fixes).unwrap()
                    })
                    .collect();
                let cfg = UnicityConfig::trace_pings(p, traces.len(), 8, seed);
                let rungs = [(0.1, 3600), (0.2, 3600), (0.2, 7200), (0.4, 14_400), (0.8, 86_400)];
                let mut prev: Option<UnicityEstimate> = None;
                for (cell, bin) in rungs {
                    let grid = fine.with_cell(cell).unwrap();
                    let sets = PointSets::from_traces(&traces, &grid, TemporalResolution::new(bin).unwrap()).unwrap();
                    let est = match unicity(&sets, &cfg) {
                        Ok(e) => e,
                        Err(Error::InsufficientPoints(_)) => return Ok(()),
                        Err(e) => return Err(TestCaseError::fail(e.to_string())),
                    };
                    if let Some(prev) = &prev {
                        for (a, b) in prev.per_target.iter().zip(&est.per_target) {
                            prop_assert_eq!(a.user, b.user);
                            prop_assert!(b.successes <= a.successes);
                        }
                    }
                    prev = Some(est);
                }
            }
        }
    }

    #[test]
    fn ping_coupled_needs_traces() {
        let s = sets_of(&[("a", &[("x", 0)]), ("b", &[("y", 0)])]);
        assert!(matches!(
            unicity(&s, &UnicityConfig::trace_pings(1, 2, 5, 1)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn ping_coupled_counts_repeated_points_once() {
        let grid = ZoneGrid::new(GeoPoint::new(0.0, 0.0).unwrap(), 1.0, 2, 2).unwrap();
        let at = |r, c, t| Fix {
            point: grid.cell_centroid(r, c).unwrap(),
            t: Timestamp(t),
        };
        // a pings the shared zone four times in one hour; b is always there too
        let a = Trace::new("a", vec![at(0, 0, 1), at(0, 0, 2), at(0, 0, 3), at(0, 0, 4)]).unwrap();
        let b = Trace::new("b", vec![at(0, 0, 5), at(1, 1, 4000)]).unwrap();
        let sets = PointSets::from_traces(&[a, b], &grid, TemporalResolution::HOUR).unwrap();
        assert_eq!(sets.n_pings(0), Some(4));
        assert_eq!(sets.n_points(0), 1);
        let est = unicity(&sets, &UnicityConfig::trace_pings(3, 2, 10, 9)).unwrap();
        // only a is eligible, and its pings all name the one shared point
        assert_eq!(est.per_target.len(), 1);
        assert_eq!(est.value, 0.0);
    }
}
