//! Geospatial and temporal primitives shared by every pipeline stage, plus
//! the record shapes of the four aggregation levels.
//!
//! Level 0 is a raw [`Ping`] keyed by user. Level 1 ([`CoarsePing`]) keeps
//! the user but replaces the coordinate with a zone. Levels 2 and 3
//! ([`AggPing`], [`CoarseAggPing`]) drop the user entirely and key each
//! record by the home zone inferred for whoever produced it.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Mean Earth radius of the spherical model, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters spanned by one degree of latitude on the spherical model.
pub const METERS_PER_DEG_LAT: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

// Relative slack (in cell units) used to snap floating-point noise onto
// exact cell boundaries.
const SNAP_EPS: f64 = 1e-9;

/// A WGS84 coordinate in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite()
            || !lon.is_finite()
            || !(-90.0..=90.0).contains(&lat)
            || !(-180.0..180.0).contains(&lon)
        {
            return Err(Error::InvalidPoint { lat, lon });
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Total order on (lat, lon); valid points are never NaN.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.lat
            .total_cmp(&other.lat)
            .then(self.lon.total_cmp(&other.lon))
    }
}

/// Integer seconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn secs(self) -> u64 {
        self.0
    }

    /// Hour of day in `0..24`.
    pub fn hour_of_day(self) -> u32 {
        ((self.0 % 86_400) / 3_600) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemporalResolution {
    bin_seconds: u64,
}

impl TemporalResolution {
    pub const HOUR: TemporalResolution = TemporalResolution { bin_seconds: 3_600 };

    pub fn new(bin_seconds: u64) -> Result<Self> {
        if bin_seconds == 0 {
            return Err(Error::InvalidConfig("bin_seconds must be positive".into()));
        }
        Ok(Self { bin_seconds })
    }

    pub fn bin_seconds(&self) -> u64 {
        self.bin_seconds
    }

    /// Start of `bin` in epoch seconds.
    pub fn bin_start(&self, bin: u64) -> Timestamp {
        Timestamp(bin * self.bin_seconds)
    }
}

pub fn time_bin(t: Timestamp, res: TemporalResolution) -> u64 {
    t.0 / res.bin_seconds
}

/// Opaque zone identifier. Grid zones use the canonical form `r{row}_c{col}`;
/// any other string (e.g. a census code) is accepted as-is.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZoneId(String);

impl ZoneId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn grid(row: u32, col: u32) -> Self {
        Self(format!("r{row}_c{col}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// `(row, col)` if this is a canonical grid id.
    pub fn grid_cell(&self) -> Option<(u32, u32)> {
        let rest = self.0.strip_prefix('r')?;
        let (row, col) = rest.split_once("_c")?;
        let row: u32 = row.parse().ok()?;
        let col: u32 = col.parse().ok()?;
        // Reject non-canonical spellings such as "r01_c2" so that
        // parse/format is a bijection.
        (ZoneId::grid(row, col).0 == self.0).then_some((row, col))
    }
}

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ZoneId {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(ZoneId::new(s))
    }
}

/// Uniform lat-lon grid standing in for statistical areas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneGrid {
    origin: GeoPoint,
    cell_deg: f64,
    n_rows: u32,
    n_cols: u32,
}

impl ZoneGrid {
    pub fn new(origin: GeoPoint, cell_deg: f64, n_rows: u32, n_cols: u32) -> Result<Self> {
        if !(cell_deg.is_finite() && cell_deg > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cell_deg must be positive, got {cell_deg}"
            )));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidConfig("grid must have at least one cell".into()));
        }
        let top = origin.lat + cell_deg * n_rows as f64;
        let right = origin.lon + cell_deg * n_cols as f64;
        if top > 90.0 || right > 180.0 {
            return Err(Error::InvalidConfig("grid extends past valid coordinates".into()));
        }
        Ok(Self {
            origin,
            cell_deg,
            n_rows,
            n_cols,
        })
    }

    /// Grid over the same region as `self` with a different cell size.
    /// The extent is rounded to a whole number of cells.
    pub fn with_cell(&self, cell_deg: f64) -> Result<Self> {
        let rows = (self.height_deg() / cell_deg).round().max(1.0) as u32;
        let cols = (self.width_deg() / cell_deg).round().max(1.0) as u32;
        ZoneGrid::new(self.origin, cell_deg, rows, cols)
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn cell_deg(&self) -> f64 {
        self.cell_deg
    }

    pub fn n_rows(&self) -> u32 {
        self.n_rows
    }

    pub fn n_cols(&self) -> u32 {
        self.n_cols
    }

    pub fn n_zones(&self) -> usize {
        self.n_rows as usize * self.n_cols as usize
    }

    pub fn height_deg(&self) -> f64 {
        self.cell_deg * self.n_rows as f64
    }

    pub fn width_deg(&self) -> f64 {
        self.cell_deg * self.n_cols as f64
    }

    /// `(row, col)` of the cell containing `p`.
    pub fn cell_of(&self, p: GeoPoint) -> Result<(u32, u32)> {
        let row = snapped_floor((p.lat - self.origin.lat) / self.cell_deg);
        let col = snapped_floor((p.lon - self.origin.lon) / self.cell_deg);
        if row < 0.0 || col < 0.0 || row >= self.n_rows as f64 || col >= self.n_cols as f64 {
            return Err(Error::OutOfBounds {
                lat: p.lat,
                lon: p.lon,
            });
        }
        Ok((row as u32, col as u32))
    }

    pub fn zone_of(&self, p: GeoPoint) -> Result<ZoneId> {
        self.cell_of(p).map(|(r, c)| ZoneId::grid(r, c))
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        self.cell_of(p).is_ok()
    }

    /// Center of a grid zone, or `None` if the id is not a cell of this grid.
    pub fn centroid(&self, zone: &ZoneId) -> Option<GeoPoint> {
        let (row, col) = zone.grid_cell()?;
        self.cell_centroid(row, col)
    }

    pub fn cell_centroid(&self, row: u32, col: u32) -> Option<GeoPoint> {
        if row >= self.n_rows || col >= self.n_cols {
            return None;
        }
        Some(GeoPoint {
            lat: self.origin.lat + (row as f64 + 0.5) * self.cell_deg,
            lon: self.origin.lon + (col as f64 + 0.5) * self.cell_deg,
        })
    }

    /// If every cell of `self` is an exact union of `k x k` cells of `finer`,
    /// returns `k`.
    pub fn nesting_factor(&self, finer: &ZoneGrid) -> Option<u32> {
        let ratio = self.cell_deg / finer.cell_deg;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * k {
            return None;
        }
        let k = k as u32;
        let same_origin = (self.origin.lat - finer.origin.lat).abs() < 1e-12
            && (self.origin.lon - finer.origin.lon).abs() < 1e-12;
        (same_origin && self.n_rows * k == finer.n_rows && self.n_cols * k == finer.n_cols)
            .then_some(k)
    }

    /// Every zone of the grid in row-major order.
    pub fn zones(&self) -> impl Iterator<Item = ZoneId> + '_ {
        (0..self.n_rows).flat_map(move |r| (0..self.n_cols).map(move |c| ZoneId::grid(r, c)))
    }
}

fn snapped_floor(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() < SNAP_EPS * nearest.abs().max(1.0) {
        nearest
    } else {
        x.floor()
    }
}

/// A single raw location record.
#[derive(Debug, Clone, PartialEq)]
pub struct Ping {
    pub user_id: String,
    pub point: GeoPoint,
    pub t: Timestamp,
}

/// One timestamped position inside a [`Trace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fix {
    pub point: GeoPoint,
    pub t: Timestamp,
}

/// One user's time-ordered pings.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    user_id: String,
    fixes: Vec<Fix>,
}

impl Trace {
    /// Builds a trace, sorting fixes by timestamp. Ties keep input order.
    pub fn new(user_id: impl Into<String>, mut fixes: Vec<Fix>) -> Result<Self> {
        let user_id = user_id.into();
        if user_id.is_empty() {
            return Err(Error::InvalidConfig("user_id must be non-empty".into()));
        }
        fixes.sort_by_key(|f| f.t);
        Ok(Self { user_id, fixes })
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn fixes(&self) -> &[Fix] {
        &self.fixes
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }

    pub fn pings(&self) -> impl Iterator<Item = Ping> + '_ {
        self.fixes.iter().map(|f| Ping {
            user_id: self.user_id.clone(),
            point: f.point,
            t: f.t,
        })
    }
}

/// Level 1 record: user, zone, time bin.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoarsePing {
    pub user_id: String,
    pub zone: ZoneId,
    pub time_bin: u64,
}

/// Level 2 record: home zone, precise point, time bin. Carries no user id.
#[derive(Debug, Clone, PartialEq)]
pub struct AggPing {
    pub home_zone: ZoneId,
    pub point: GeoPoint,
    pub time_bin: u64,
}

/// Level 3 record: home zone, visited zone, time bin. Carries no user id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoarseAggPing {
    pub home_zone: ZoneId,
    pub visit_zone: ZoneId,
    pub time_bin: u64,
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Mean speed in m/s between two fixes.
pub fn speed_between(a: Fix, b: Fix) -> Result<f64> {
    if b.t <= a.t {
        return Err(Error::ZeroDuration(b.t.0));
    }
    Ok(haversine_distance(a.point, b.point) / (b.t.0 - a.t.0) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TravelMode {
    Stationary,
    Walk,
    Vehicle,
}

/// Upper speed bounds (m/s, exclusive) for the slower modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeThresholds {
    pub stationary_below: f64,
    pub walk_below: f64,
}

impl Default for ModeThresholds {
    fn default() -> Self {
        Self {
            stationary_below: 0.3,
            walk_below: 2.5,
        }
    }
}

pub fn classify_mode(speed: f64, thresholds: &ModeThresholds) -> TravelMode {
    if speed < thresholds.stationary_below {
        TravelMode::Stationary
    } else if speed < thresholds.walk_below {
        TravelMode::Walk
    } else {
        TravelMode::Vehicle
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn grid() -> ZoneGrid {
        ZoneGrid::new(pt(41.80, -72.30), 0.01, 32, 32).unwrap()
    }

    #[test]
    fn haversine_examples() {
        assert_eq!(haversine_distance(pt(0.0, 0.0), pt(0.0, 0.0)), 0.0);
        // R * pi / 180
        let d = haversine_distance(pt(0.0, 0.0), pt(0.0, 1.0));
        assert!((d - 111_194.926_644_558_7).abs() < 1e-6, "{d}");
        assert!((d - 111_195.0).abs() < 1.0);
    }

    #[test]
    fn rejects_bad_points() {
        assert!(GeoPoint::new(90.1, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 180.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(-90.0, -180.0).is_ok());
    }

    #[test]
    fn zone_of_examples() {
        let g = grid();
        assert_eq!(g.zone_of(pt(41.80, -72.30)).unwrap().as_str(), "r0_c0");
        assert_eq!(g.zone_of(pt(41.83, -72.237)).unwrap().as_str(), "r3_c6");
        let east = -72.30 + 32.0 * 0.01 + 1e-9;
        assert!(matches!(
            g.zone_of(pt(41.85, east)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(g.zone_of(pt(41.79999, -72.25)).is_err());
    }

    #[test]
    fn zone_id_round_trip() {
        let z = ZoneId::grid(12, 7);
        assert_eq!(z.as_str(), "r12_c7");
        assert_eq!(z.grid_cell(), Some((12, 7)));
        assert_eq!(ZoneId::new("r01_c2").grid_cell(), None);
        assert_eq!(ZoneId::new("250173164003").grid_cell(), None);
        assert!(ZoneId::new("r0_c9") < ZoneId::new("r1_c1"));
    }

    #[test]
    fn time_bin_examples() {
        let h = TemporalResolution::HOUR;
        assert_eq!(time_bin(Timestamp(0), h), 0);
        assert_eq!(time_bin(Timestamp(3600), h), 1);
        assert_eq!(time_bin(Timestamp(7322), h), 2);
        assert!(TemporalResolution::new(0).is_err());
    }

    #[test]
    fn speed_examples() {
        let a = Fix {
            point: pt(0.0, 0.0),
            t: Timestamp(0),
        };
        let same = Fix {
            point: pt(0.0, 0.0),
            t: Timestamp(60),
        };
        assert_eq!(speed_between(a, same).unwrap(), 0.0);
        let far = Fix {
            point: pt(0.0, 1.0),
            t: Timestamp(3600),
        };
        assert!((speed_between(a, far).unwrap() - 30.887).abs() < 0.01);
        assert!(matches!(speed_between(a, a), Err(Error::ZeroDuration(0))));
    }

    #[test]
    fn mode_examples() {
        let th = ModeThresholds::default();
        assert_eq!(classify_mode(0.0, &th), TravelMode::Stationary);
        assert_eq!(classify_mode(1.4, &th), TravelMode::Walk);
        assert_eq!(classify_mode(15.0, &th), TravelMode::Vehicle);
        let custom = ModeThresholds {
            stationary_below: 0.1,
            walk_below: 1.0,
        };
        assert_eq!(classify_mode(1.4, &custom), TravelMode::Vehicle);
    }

    #[test]
    fn trace_sorts_and_round_trips() {
        let fixes = vec![
            Fix {
                point: pt(41.81, -72.2),
                t: Timestamp(50),
            },
            Fix {
                point: pt(41.82, -72.2),
                t: Timestamp(10),
            },
        ];
        let tr = Trace::new("u1", fixes).unwrap();
        assert_eq!(tr.fixes()[0].t, Timestamp(10));
        let again = Trace::new("u1", tr.pings().map(|p| Fix { point: p.point, t: p.t }).collect())
            .unwrap();
        assert_eq!(tr, again);
        assert!(Trace::new("", vec![]).is_err());
    }

    #[test]
    fn nesting() {
        let fine = ZoneGrid::new(pt(41.80, -72.30), 0.0025, 128, 128).unwrap();
        let coarse = fine.with_cell(0.16).unwrap();
        assert_eq!((coarse.n_rows(), coarse.n_cols()), (2, 2));
        assert_eq!(coarse.nesting_factor(&fine), Some(64));
        assert_eq!(fine.nesting_factor(&coarse), None);
    }

    proptest! {
        #[test]
        fn haversine_symmetric_and_triangle(
            a in (-80.0f64..80.0, -179.0f64..179.0),
            b in (-80.0f64..80.0, -179.0f64..179.0),
            c in (-80.0f64..80.0, -179.0f64..179.0),
        ) {
            let (a, b, c) = (pt(a.0, a.1), pt(b.0, b.1), pt(c.0, c.1));
            let ab = haversine_distance(a, b);
            prop_assert_eq!(ab, haversine_distance(b, a));
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(haversine_distance(a, a), 0.0);
            let ac = haversine_distance(a, c);
            let cb = haversine_distance(c, b);
            prop_assert!(ab <= (ac + cb) * (1.0 + 1e-6) + 1e-6);
        }

        #[test]
        fn zone_of_partitions_cells(lat in 41.80f64..42.12, lon in -72.30f64..-71.98) {
            let g = grid();
            let p = pt(lat, lon);
            let z = g.zone_of(p).unwrap();
            let (r, c) = z.grid_cell().unwrap();
            let lo_lat = 41.80 + r as f64 * 0.01;
            let lo_lon = -72.30 + c as f64 * 0.01;
            prop_assert!(lat >= lo_lat - 1e-9 && lat < lo_lat + 0.01 + 1e-9);
            prop_assert!(lon >= lo_lon - 1e-9 && lon < lo_lon + 0.01 + 1e-9);
            // the centroid of the zone maps back into it
            prop_assert_eq!(g.zone_of(g.centroid(&z).unwrap()).unwrap(), z);
        }

        #[test]
        fn nested_grids_agree(lat_u in 0u32..320_000, lon_u in 0u32..320_000) {
            // six-decimal quantized points, as produced by the generator
            let lat = (41_800_000 + lat_u) as f64 / 1e6;
            let lon = (-72_300_000 + lon_u as i64) as f64 / 1e6;
            let fine = ZoneGrid::new(pt(41.80, -72.30), 0.0025, 128, 128).unwrap();
            for cell in [0.01, 0.04, 0.16] {
                let coarse = fine.with_cell(cell).unwrap();
                let k = coarse.nesting_factor(&fine).unwrap();
                let (fr, fc) = fine.cell_of(pt(lat, lon)).unwrap();
                let (cr, cc) = coarse.cell_of(pt(lat, lon)).unwrap();
                prop_assert_eq!((fr / k, fc / k), (cr, cc));
            }
        }

        #[test]
        fn time_bin_monotone_and_stable(t in 0u64..10_000_000, d in 0u64..100_000, bin in 1u64..100_000) {
            let res = TemporalResolution::new(bin).unwrap();
            prop_assert!(time_bin(Timestamp(t), res) <= time_bin(Timestamp(t + d), res));
            let room = bin - (t % bin);
            let within = d % room;
            prop_assert_eq!(time_bin(Timestamp(t), res), time_bin(Timestamp(t + within), res));
        }
    }
}
