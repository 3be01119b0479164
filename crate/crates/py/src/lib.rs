//! Python bindings: synthetic populations, level transforms, attacks and the
//! risk-utility sweep.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use geotrace::aggregate::{apply, infer_homes, AggregationConfig, Level, LevelData};
use geotrace::config::RunConfig;
use geotrace::curve::{sweep, SweepConfig};
use geotrace::io::{self, TruthRow};
use geotrace::model::{haversine_distance, time_bin as bin_of, GeoPoint, TemporalResolution, Timestamp, Trace, ZoneGrid};
use geotrace::risk::reconstruct::cohort_sizes_from_homes;
use geotrace::risk::{reconstruct, reconstruction_accuracy, unicity, AggregatedRecords, PointSets, ReconstructConfig, TrialMode, UnicityConfig};
use geotrace::synth::{generate_population, reference_grid, PopulationConfig};

create_exception!(geotrace_py, GeotraceError, PyException);

fn err(e: geotrace::Error) -> PyErr {
    GeotraceError::new_err(format!("{}: {e}", e.kind()))
}

fn grid_at(cell_deg: f64) -> PyResult<ZoneGrid> {
    reference_grid().with_cell(cell_deg).map_err(err)
}

fn level_of(level: u8) -> PyResult<Level> {
    Level::from_index(level).map_err(err)
}

/// Great-circle distance in meters.
#[pyfunction]
fn haversine(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> PyResult<f64> {
    let a = GeoPoint::new(lat1, lon1).map_err(err)?;
    let b = GeoPoint::new(lat2, lon2).map_err(err)?;
    Ok(haversine_distance(a, b))
}

/// Zone id of a point on the reference region at the given cell size.
#[pyfunction]
#[pyo3(signature = (lat, lon, cell_deg = 0.0025))]
fn zone_of(lat: f64, lon: f64, cell_deg: f64) -> PyResult<String> {
    let p = GeoPoint::new(lat, lon).map_err(err)?;
    Ok(grid_at(cell_deg)?.zone_of(p).map_err(err)?.as_str().to_string())
}

#[pyfunction]
fn time_bin(t: u64, bin_s: u64) -> PyResult<u64> {
    Ok(bin_of(Timestamp(t), TemporalResolution::new(bin_s).map_err(err)?))
}

/// Traces plus ground truth.
#[pyclass(frozen)]
struct Population {
    traces: Vec<Trace>,
    truth: Vec<TruthRow>,
}

#[pymethods]
impl Population {
    /// Generates a synthetic population on the reference grid.
    #[staticmethod]
    #[pyo3(signature = (n_users = 1000, n_days = 14, seed = 42, ping_rate = 2.0, p_explore = 0.2))]
    fn synthesize(py: Python<'_>, n_users: usize, n_days: u32, seed: u64, ping_rate: f64, p_explore: f64) -> PyResult<Self> {
        let cfg = PopulationConfig {
            n_users,
            n_days,
            seed,
            ping_rate,
            p_explore,
            ..PopulationConfig::reference()
        };
        let (traces, truth) = py.detach(|| generate_population(&cfg)).map_err(err)?;
        Ok(Self {
            traces,
            truth: truth.rows(),
        })
    }

    /// Reads a ping CSV and, optionally, its truth CSV.
    #[staticmethod]
    #[pyo3(signature = (pings, truth = None))]
    fn read(pings: PathBuf, truth: Option<PathBuf>) -> PyResult<Self> {
        Ok(Self {
            traces: io::read_pings(&pings).map_err(err)?,
            truth: truth.map(|t| io::read_truth(&t)).transpose().map_err(err)?.unwrap_or_default(),
        })
    }

    fn write(&self, pings: PathBuf, truth: PathBuf) -> PyResult<()> {
        io::write_pings(&self.traces, &pings).map_err(err)?;
        io::write_truth(&self.truth, &truth).map_err(err)
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.traces.len()
    }

    #[getter]
    fn n_pings(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    /// `(user_id, lat, lon, t)` tuples.
    fn pings(&self) -> Vec<(String, f64, f64, u64)> {
        self.traces
            .iter()
            .flat_map(|t| t.pings())
            .map(|p| (p.user_id, p.point.lat(), p.point.lon(), p.t.secs()))
            .collect()
    }

    /// `(user_id, home_zone, work_zone)` tuples.
    fn truth(&self) -> Vec<(String, String, String)> {
        self.truth
            .iter()
            .map(|r| (r.user_id.clone(), r.home_zone.as_str().to_string(), r.work_zone.as_str().to_string()))
            .collect()
    }

    /// Records of `level` as tuples in the column order of its CSV.
    #[pyo3(signature = (level, cell_deg = 0.0025, bin_s = 3600))]
    fn aggregate<'py>(&self, py: Python<'py>, level: u8, cell_deg: f64, bin_s: u64) -> PyResult<Vec<Bound<'py, PyAny>>> {
        let cfg = AggregationConfig::new(level_of(level)?, grid_at(cell_deg)?, TemporalResolution::new(bin_s).map_err(err)?);
        let data = py.detach(|| apply(&self.traces, &cfg)).map_err(err)?;
        let rows = match data {
            LevelData::Raw(_) => {
                return self.pings().into_iter().map(|r| Ok(r.into_pyobject(py)?.into_any())).collect();
            }
            LevelData::Coarse(r) => r
                .into_iter()
                .map(|r| (r.user_id, r.zone.as_str().to_string(), r.time_bin).into_pyobject(py).map(Bound::into_any))
                .collect::<PyResult<Vec<_>>>()?,
            LevelData::Aggregated(r) => r
                .into_iter()
                .map(|r| {
                    (r.home_zone.as_str().to_string(), r.point.lat(), r.point.lon(), r.time_bin)
                        .into_pyobject(py)
                        .map(Bound::into_any)
                })
                .collect::<PyResult<Vec<_>>>()?,
            LevelData::CoarseAggregated(r) => r
                .into_iter()
                .map(|r| {
                    (r.home_zone.as_str().to_string(), r.visit_zone.as_str().to_string(), r.time_bin)
                        .into_pyobject(py)
                        .map(Bound::into_any)
                })
                .collect::<PyResult<Vec<_>>>()?,
        };
        Ok(rows)
    }

    /// p-point unicity of the raw traces: `(value, std_error)`.
    #[pyo3(signature = (p = 4, seed = 0, cell_deg = 0.0025, bin_s = 3600, n_targets = None, trials = 50, mode = "trace_pings"))]
    #[allow(clippy::too_many_arguments)]
    fn unicity(
        &self,
        py: Python<'_>,
        p: usize,
        seed: u64,
        cell_deg: f64,
        bin_s: u64,
        n_targets: Option<usize>,
        trials: usize,
        mode: &str,
    ) -> PyResult<(f64, f64)> {
        let grid = grid_at(cell_deg)?;
        let temporal = TemporalResolution::new(bin_s).map_err(err)?;
        let mut cfg = UnicityConfig::sampled(p, n_targets.unwrap_or(self.traces.len()), trials, seed);
        cfg.mode = match mode {
            "sampled" => TrialMode::Sampled,
            "exhaustive" => TrialMode::Exhaustive,
            "trace_pings" => TrialMode::TracePings,
            m => return Err(GeotraceError::new_err(format!("InvalidConfig: unknown mode {m}"))),
        };
        let est = py
            .detach(|| PointSets::from_traces(&self.traces, &grid, temporal).and_then(|s| unicity(&s, &cfg)))
            .map_err(err)?;
        Ok((est.value, est.std_error()))
    }

    /// Per-step accuracy of reconstructing level 2 or 3 records.
    #[pyo3(signature = (level, cell_deg = 0.0025, bin_s = 3600))]
    fn reconstruction_accuracy(&self, py: Python<'_>, level: u8, cell_deg: f64, bin_s: u64) -> PyResult<f64> {
        let grid = grid_at(cell_deg)?;
        let temporal = TemporalResolution::new(bin_s).map_err(err)?;
        let level = level_of(level)?;
        if level.is_linked() {
            return Err(GeotraceError::new_err("InvalidConfig: level must be 2 or 3"));
        }
        py.detach(|| {
            let data = apply(&self.traces, &AggregationConfig::new(level, grid, temporal))?;
            let homes = infer_homes(&self.traces, &grid, Default::default())?;
            let cfg = ReconstructConfig::new(grid, temporal, cohort_sizes_from_homes(&homes));
            let records = match &data {
                LevelData::Aggregated(r) => AggregatedRecords::Points(r),
                LevelData::CoarseAggregated(r) => AggregatedRecords::Zones(r),
                _ => unreachable!(),
            };
            let rec = reconstruct(records, &cfg)?;
            reconstruction_accuracy(&rec.candidates, &self.traces, &grid, temporal)
        })
        .map(|a| a.per_step)
        .map_err(err)
    }

    /// Runs the sweep of a config file, or the reference sweep, and returns
    /// one dict per rung.
    #[pyo3(signature = (seed, config = None))]
    fn sweep<'py>(&self, py: Python<'py>, seed: u64, config: Option<PathBuf>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut cfg = match config {
            Some(path) => RunConfig::load(&path).map_err(err)?.sweep,
            None => SweepConfig::reference(seed),
        };
        cfg.unicity.seed = seed;
        let points = py.detach(|| sweep(&self.traces, &self.truth, &cfg)).map_err(err)?;
        points
            .into_iter()
            .map(|p| {
                let d = PyDict::new(py);
                d.set_item("config_id", &p.config_id)?;
                d.set_item("level", p.rung.level.index())?;
                d.set_item("spatial_cell_deg", p.rung.cell_deg)?;
                d.set_item("temporal_s", p.rung.bin_seconds)?;
                d.set_item("risk", p.risk)?;
                d.set_item("utility", p.utility)?;
                d.set_item("risk_kind", p.risk_kind.as_str())?;
                d.set_item("min_p", p.min_p)?;
                Ok(d)
            })
            .collect()
    }
}

#[pymodule]
pub fn geotrace_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GeotraceError", m.py().get_type::<GeotraceError>())?;
    m.add_function(wrap_pyfunction!(haversine, m)?)?;
    m.add_function(wrap_pyfunction!(zone_of, m)?)?;
    m.add_function(wrap_pyfunction!(time_bin, m)?)?;
    m.add_class::<Population>()?;
    Ok(())
}
