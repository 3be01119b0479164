//! Synthetic population generator with known ground truth.
//!
//! Each user has a fixed home and work anchor in distinct zones and a pool of
//! leisure anchors grown by an explore/preferential-return rule. Days follow
//! a routine: home overnight, work on weekdays, evening or weekend leisure
//! trips, and back home before 20:00. Travel between anchors is a straight
//! line at [`TRAVEL_SPEED_MPS`]. Pings are a Poisson process over the whole
//! period with Gaussian positional noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::TruthRow;
use crate::model::{
    haversine_distance, Fix, GeoPoint, Timestamp, Trace, ZoneGrid, ZoneId, METERS_PER_DEG_LAT,
};
use crate::seeding::rng_for;

pub const TRAVEL_SPEED_MPS: f64 = 10.0;

const DAY: f64 = 86_400.0;
const HOUR: f64 = 3_600.0;
const MINUTE: f64 = 60.0;
// Anchors sit within this fraction of a cell from its center, which keeps
// noisy pings inside the anchor's zone on the generator grid and on every
// coarser grid nested over it.
const ANCHOR_SPREAD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig {
    pub n_users: usize,
    pub n_days: u32,
    pub grid: ZoneGrid,
    /// Mean pings per user per hour.
    pub ping_rate: f64,
    pub p_explore: f64,
    pub n_leisure: usize,
    pub gps_noise_m: f64,
    pub seed: u64,
}

impl PopulationConfig {
    /// 1,000 users over 14 days on a 128x128 grid of 0.0025 degree cells.
    pub fn reference() -> Self {
        Self {
            n_users: 1_000,
            n_days: 14,
            grid: reference_grid(),
            ping_rate: 2.0,
            p_explore: 0.2,
            n_leisure: 3,
            gps_noise_m: 25.0,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_users == 0 {
            return bad("n_users must be positive");
        }
        if self.n_days == 0 {
            return bad("n_days must be positive");
        }
        if !(self.ping_rate.is_finite() && self.ping_rate > 0.0) {
            return bad("ping_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_explore) {
            return bad("p_explore must be in [0, 1]");
        }
        if !(self.gps_noise_m.is_finite() && self.gps_noise_m >= 0.0) {
            return bad("gps_noise_m must be non-negative");
        }
        if self.grid.n_zones() < 2 {
            return bad("grid needs at least two zones for distinct home and work");
        }
        Ok(())
    }
}

/// Grid used by the reference population: origin (41.80, -72.30),
/// 0.32 x 0.32 degrees split into 0.0025 degree cells.
pub fn reference_grid() -> ZoneGrid {
    ZoneGrid::new(GeoPoint::new(41.80, -72.30).unwrap(), 0.0025, 128, 128).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stay {
    pub point: GeoPoint,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTruth {
    pub user_id: String,
    pub home_zone: ZoneId,
    pub work_zone: ZoneId,
    pub home: GeoPoint,
    pub work: GeoPoint,
    /// Every leisure anchor the user knew by the end of the run.
    pub leisure: Vec<GeoPoint>,
    pub stays: Vec<Stay>,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub users: Vec<UserTruth>,
}

impl GroundTruth {
    pub fn rows(&self) -> Vec<TruthRow> {
        self.users
            .iter()
            .map(|u| TruthRow {
                user_id: u.user_id.clone(),
                home_zone: u.home_zone.clone(),
                work_zone: u.work_zone.clone(),
            })
            .collect()
    }

    pub fn traces(&self) -> Vec<Trace> {
        self.users.iter().map(|u| u.trace.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Stay { at: GeoPoint, end: f64 },
    Travel { from: GeoPoint, to: GeoPoint, start: f64, end: f64 },
}

impl Segment {
    fn end(&self) -> f64 {
        match *self {
            Segment::Stay { end, .. } | Segment::Travel { end, .. } => end,
        }
    }

    fn position(&self, s: f64) -> GeoPoint {
        match *self {
            Segment::Stay { at, .. } => at,
            Segment::Travel {
                from,
                to,
                start,
                end,
            } => {
                let f = if end > start {
                    ((s - start) / (end - start)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                GeoPoint::new(
                    from.lat() + f * (to.lat() - from.lat()),
                    from.lon() + f * (to.lon() - from.lon()),
                )
                .expect("interpolation between valid points")
            }
        }
    }
}

struct Planner {
    segments: Vec<Segment>,
    stays: Vec<Stay>,
    pos: GeoPoint,
    clock: f64,
}

impl Planner {
    fn stay_until(&mut self, until: f64) {
        if until > self.clock {
            self.segments.push(Segment::Stay {
                at: self.pos,
                end: until,
            });
            self.stays.push(Stay {
                point: self.pos,
                start: self.clock as u64,
                end: until as u64,
            });
            self.clock = until;
        }
    }

    fn travel_to(&mut self, dest: GeoPoint) {
        let dur = haversine_distance(self.pos, dest) / TRAVEL_SPEED_MPS;
        if dur > 0.0 {
            self.segments.push(Segment::Travel {
                from: self.pos,
                to: dest,
                start: self.clock,
                end: self.clock + dur,
            });
            self.clock += dur;
        }
        self.pos = dest;
    }
}

struct Leisure {
    known: Vec<(GeoPoint, u32)>,
}

impl Leisure {
    /// Exploration with probability `p_explore`, otherwise return to a known
    /// anchor chosen proportionally to past visits.
    fn choose(&mut self, rng: &mut ChaCha8Rng, grid: &ZoneGrid, p_explore: f64) -> Option<GeoPoint> {
        let explore = p_explore > 0.0 && rng.random::<f64>() < p_explore;
        if explore || self.known.is_empty() {
            if !explore && p_explore == 0.0 {
                return None;
            }
            let p = random_anchor(rng, grid);
            self.known.push((p, 1));
            return Some(p);
        }
        let total: u32 = self.known.iter().map(|k| k.1).sum();
        let mut pick = rng.random_range(0..total);
        for entry in self.known.iter_mut() {
            if pick < entry.1 {
                entry.1 += 1;
                return Some(entry.0);
            }
            pick -= entry.1;
        }
        unreachable!("pick < total")
    }
}

fn random_cell(rng: &mut ChaCha8Rng, grid: &ZoneGrid) -> (u32, u32) {
    (
        rng.random_range(0..grid.n_rows()),
        rng.random_range(0..grid.n_cols()),
    )
}

fn anchor_in_cell(rng: &mut ChaCha8Rng, grid: &ZoneGrid, (row, col): (u32, u32)) -> GeoPoint {
    let c = grid.cell_centroid(row, col).expect("cell in grid");
    let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-ANCHOR_SPREAD..ANCHOR_SPREAD) * grid.cell_deg();
    let lat = quantize(c.lat() + jitter(rng));
    let lon = quantize(c.lon() + jitter(rng));
    GeoPoint::new(lat, lon).expect("anchor inside grid")
}

fn random_anchor(rng: &mut ChaCha8Rng, grid: &ZoneGrid) -> GeoPoint {
    let cell = random_cell(rng, grid);
    anchor_in_cell(rng, grid, cell)
}

fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn minutes(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi) * MINUTE
}

/// One leisure outing from the current position that returns home before
/// `deadline`. Skipped if there is no time for a 15-minute visit.
fn leisure_trip(
    plan: &mut Planner,
    leisure: &mut Leisure,
    rng: &mut ChaCha8Rng,
    cfg: &PopulationConfig,
    home: GeoPoint,
    dwell: (f64, f64),
    deadline: f64,
) {
    let Some(dest) = leisure.choose(rng, &cfg.grid, cfg.p_explore) else {
        return;
    };
    let there = haversine_distance(plan.pos, dest) / TRAVEL_SPEED_MPS;
    let back = haversine_distance(dest, home) / TRAVEL_SPEED_MPS;
    let latest = deadline - 10.0 * MINUTE;
    let wanted = minutes(rng, dwell.0, dwell.1);
    let dwell = wanted.min(latest - plan.clock - there - back);
    if dwell < 15.0 * MINUTE {
        return;
    }
    plan.travel_to(dest);
    let until = plan.clock + dwell;
    plan.stay_until(until);
}

fn simulate_user(cfg: &PopulationConfig, index: usize, width: usize) -> UserTruth {
    let mut rng = rng_for(cfg.seed, &[index as u64]);
    let grid = &cfg.grid;

    let home_cell = random_cell(&mut rng, grid);
    let mut work_cell = random_cell(&mut rng, grid);
    while work_cell == home_cell {
        work_cell = random_cell(&mut rng, grid);
    }
    let home = anchor_in_cell(&mut rng, grid, home_cell);
    let work = anchor_in_cell(&mut rng, grid, work_cell);
    let mut leisure = Leisure {
        known: (0..cfg.n_leisure)
            .map(|_| (random_anchor(&mut rng, grid), 1))
            .collect(),
    };

    let mut plan = Planner {
        segments: Vec::new(),
        stays: Vec::new(),
        pos: home,
        clock: 0.0,
    };
    for d in 0..cfg.n_days {
        let day = d as f64 * DAY;
        let deadline = day + 20.0 * HOUR;
        if d % 7 < 5 {
            plan.stay_until(day + 8.0 * HOUR + minutes(&mut rng, -30.0, 30.0));
            plan.travel_to(work);
            plan.stay_until(day + 17.0 * HOUR + minutes(&mut rng, -30.0, 30.0));
            if rng.random::<f64>() < 0.5 {
                leisure_trip(&mut plan, &mut leisure, &mut rng, cfg, home, (45.0, 120.0), deadline);
            }
            plan.travel_to(home);
        } else {
            plan.stay_until(day + 10.0 * HOUR + minutes(&mut rng, -60.0, 60.0));
            leisure_trip(&mut plan, &mut leisure, &mut rng, cfg, home, (60.0, 180.0), deadline);
            plan.travel_to(home);
            if rng.random::<f64>() < 0.5 {
                let until = plan.clock + minutes(&mut rng, 30.0, 90.0);
                plan.stay_until(until);
                leisure_trip(&mut plan, &mut leisure, &mut rng, cfg, home, (45.0, 120.0), deadline);
                plan.travel_to(home);
            }
        }
    }
    plan.stay_until(cfg.n_days as f64 * DAY);

    let fixes = emit_pings(&plan.segments, cfg, &mut rng);
    let user_id = format!("u{index:0width$}");
    UserTruth {
        trace: Trace::new(user_id.clone(), fixes).expect("non-empty user id"),
        user_id,
        home_zone: ZoneId::grid(home_cell.0, home_cell.1),
        work_zone: ZoneId::grid(work_cell.0, work_cell.1),
        home,
        work,
        leisure: leisure.known.iter().map(|k| k.0).collect(),
        stays: plan.stays,
    }
}

fn emit_pings(segments: &[Segment], cfg: &PopulationConfig, rng: &mut ChaCha8Rng) -> Vec<Fix> {
    let horizon = cfg.n_days as f64 * DAY;
    let gaps = Exp::new(cfg.ping_rate / HOUR).expect("positive rate");
    let noise = Normal::new(0.0, cfg.gps_noise_m).expect("finite noise");
    let grid = &cfg.grid;
    let (lat_lo, lon_lo) = (grid.origin().lat(), grid.origin().lon());
    let margin = 2e-6;
    let lat_range = (lat_lo + margin, lat_lo + grid.height_deg() - margin);
    let lon_range = (lon_lo + margin, lon_lo + grid.width_deg() - margin);

    let mut fixes = Vec::new();
    let mut seg = 0;
    let mut s = 0.0;
    loop {
        s += gaps.sample(rng);
        if s >= horizon {
            break;
        }
        while seg + 1 < segments.len() && segments[seg].end() <= s {
            seg += 1;
        }
        let p = segments[seg].position(s);
        let (dn, de) = if cfg.gps_noise_m > 0.0 {
            (noise.sample(rng), noise.sample(rng))
        } else {
            (0.0, 0.0)
        };
        let lat = (p.lat() + dn / METERS_PER_DEG_LAT).clamp(lat_range.0, lat_range.1);
        let lon = (p.lon() + de / (METERS_PER_DEG_LAT * p.lat().to_radians().cos()))
            .clamp(lon_range.0, lon_range.1);
        fixes.push(Fix {
            point: GeoPoint::new(quantize(lat), quantize(lon)).expect("clamped into grid"),
            t: Timestamp(s as u64),
        });
    }
    fixes
}

/// Generates `n_users` traces (sorted by user id) and their ground truth.
/// Output is a pure function of `cfg`, independent of the thread count.
pub fn generate_population(cfg: &PopulationConfig) -> Result<(Vec<Trace>, GroundTruth)> {
    cfg.validate()?;
    let width = (cfg.n_users.saturating_sub(1)).to_string().len().max(5);
    let users: Vec<UserTruth> = (0..cfg.n_users)
        .into_par_iter()
        .map(|i| simulate_user(cfg, i, width))
        .collect();
    let traces = users.iter().map(|u| u.trace.clone()).collect();
    Ok((traces, GroundTruth { users }))
}
