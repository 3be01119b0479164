//! Unicity across a ladder of spatial and temporal resolutions, with a
//! power-law fit of how fast it decays as resolution coarsens.

use crate::error::{Error, Result};
use crate::model::{TemporalResolution, Trace, ZoneGrid};
use crate::risk::unicity::{unicity, PointSets, UnicityConfig, UnicityEstimate};

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRung {
    pub cell_deg: f64,
    pub bin_seconds: u64,
    pub estimate: UnicityEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// Spatial-major: all temporal rungs of the first cell size, then the next.
    pub rungs: Vec<DecayRung>,
    /// Negated log-log slope of unicity against coarsening factor.
    pub exponent: f64,
}

impl DecayReport {
    pub fn get(&self, cell_deg: f64, bin_seconds: u64) -> Option<&DecayRung> {
        self.rungs
            .iter()
            .find(|r| r.cell_deg == cell_deg && r.bin_seconds == bin_seconds)
    }
}

fn check_ladder<T: PartialOrd + Copy>(ladder: &[T], what: &str) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::InvalidConfig(format!("{what} ladder is empty")));
    }
    if ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "{what} ladder must be strictly increasing (fine to coarse)"
        )));
    }
    Ok(())
}

/// Computes unicity at every (cell size x bin width) rung. Grids share the
/// region of `base`.
///
/// The coarsening factor of a rung is `(cell / cell_0) * (bin / bin_0)`
/// relative to the finest rung; the exponent is fitted over rungs with
/// positive unicity.
pub fn unicity_decay(
    traces: &[Trace],
    base: &ZoneGrid,
    spatial: &[f64],
    temporal: &[u64],
    cfg: &UnicityConfig,
) -> Result<DecayReport> {
    check_ladder(spatial, "spatial")?;
    check_ladder(temporal, "temporal")?;
    let mut rungs = Vec::with_capacity(spatial.len() * temporal.len());
    for &cell in spatial {
        let grid = base.with_cell(cell)?;
        for &bin in temporal {
            let sets = PointSets::from_traces(traces, &grid, TemporalResolution::new(bin)?)?;
            log::debug!("unicity rung cell={cell} bin={bin}");
            rungs.push(DecayRung {
                cell_deg: cell,
                bin_seconds: bin,
                estimate: unicity(&sets, cfg)?,
            });
        }
    }
    let samples: Vec<(f64, f64)> = rungs
        .iter()
        .filter(|r| r.estimate.value > 0.0)
        .map(|r| {
            let factor = (r.cell_deg / spatial[0]) * (r.bin_seconds as f64 / temporal[0] as f64);
            (factor.ln(), r.estimate.value.ln())
        })
        .collect();
    let slope = least_squares_slope(&samples).ok_or(Error::DegenerateFit)?;
    Ok(DecayReport {
        rungs,
        exponent: -slope,
    })
}

/// Ordinary least-squares slope of y on x; `None` with fewer than two
/// distinct x values.
pub fn least_squares_slope(samples: &[(f64, f64)]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Fix, GeoPoint, Timestamp};

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0, 8.0]
            .iter()
            .map(|&f| (f.ln(), (0.9 * f.powf(-0.1)).ln()))
            .collect();
        assert!((least_squares_slope(&pts).unwrap() + 0.1).abs() < 1e-12);
        assert_eq!(least_squares_slope(&pts[..1]), None);
        assert_eq!(least_squares_slope(&[(1.0, 2.0), (1.0, 3.0)]), None);
    }

    fn two_users() -> (Vec<Trace>, ZoneGrid) {
        let grid = ZoneGrid::new(GeoPoint::new(0.0, 0.0).unwrap(), 0.25, 4, 4).unwrap();
        let mk = |id: &str, lat: f64, lon: f64| {
            Trace::new(
                id,
                (0..48)
                    .map(|h| Fix {
                        point: GeoPoint::new(lat, lon + (h % 2) as f64 * 0.3).unwrap(),
                        t: Timestamp(h * 3600 + 10),
                    })
                    .collect(),
            )
            .unwrap()
        };
        (vec![mk("a", 0.1, 0.1), mk("b", 0.6, 0.1)], grid)
    }

    #[test]
    fn coarsest_rung_is_anonymous() {
        let (traces, grid) = two_users();
        // at 1 degree x 2 days both users occupy the single zone in every bin
        let report = unicity_decay(&traces, &grid, &[0.25, 1.0], &[3600, 172_800], &UnicityConfig::exhaustive(1));
        let report = report.unwrap();
        assert_eq!(report.get(1.0, 172_800).unwrap().estimate.value, 0.0);
        assert_eq!(report.get(0.25, 3600).unwrap().estimate.value, 1.0);
    }

    #[test]
    fn degenerate_fit_and_bad_ladders() {
        let (traces, grid) = two_users();
        let cfg = UnicityConfig::exhaustive(1);
        assert!(matches!(
            unicity_decay(&traces, &grid, &[1.0], &[172_800], &cfg),
            Err(Error::DegenerateFit)
        ));
        assert!(unicity_decay(&traces, &grid, &[], &[3600], &cfg).is_err());
        assert!(unicity_decay(&traces, &grid, &[1.0, 0.25], &[3600], &cfg).is_err());
    }
}
