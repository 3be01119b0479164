//! Flat `section.key = value` run configuration. Blank lines and text after
//! `#` are ignored; every key not given keeps its reference default.
//!
//! ```text
//! population.users = 1000
//! grid.cell_deg = 0.0025
//! sweep.rungs = 0:0.0025:3600, 1:0.01:3600, 2:0.0025:3600, 3:0.0025:3600
//! ```
//!
//! Seeds are deliberately absent; randomized commands take them as flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::aggregate::Level;
use crate::curve::{Rung, SweepConfig};
use crate::error::{Error, Result};
use crate::model::{GeoPoint, ZoneGrid};
use crate::risk::TrialMode;
use crate::synth::PopulationConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub pings: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    pub population: PopulationConfig,
    pub sweep: SweepConfig,
    /// Filter string for the logger, e.g. `info` or `geotrace=debug`.
    pub log_level: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            population: PopulationConfig::reference(),
            sweep: SweepConfig::reference(0),
            log_level: None,
        }
    }
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

fn entries<'a>(text: &'a str, path: &Path) -> Result<Vec<Entry<'a>>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |reason: String| Error::ConfigParse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| err(format!("expected `section.key = value`, got `{body}`")))?;
        let (key, value) = (key.trim(), value.trim());
        match key.split_once('.') {
            Some((s, k)) if !s.is_empty() && !k.is_empty() && !k.contains('.') => {}
            _ => return Err(err(format!("key `{key}` is not of the form section.key"))),
        }
        if value.is_empty() {
            return Err(err(format!("empty value for `{key}`")));
        }
        if !seen.insert(key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        out.push(Entry { line, key, value });
    }
    Ok(out)
}

fn parse_rungs(s: &str) -> std::result::Result<Vec<Rung>, String> {
    s.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let [l, c, b] = parts[..] else {
                return Err(format!("rung `{}` is not level:cell_deg:bin_seconds", item.trim()));
            };
            let level = l
                .parse::<u8>()
                .ok()
                .and_then(|i| Level::from_index(i).ok())
                .ok_or_else(|| format!("bad level `{l}`"))?;
            let cell = c.parse::<f64>().map_err(|_| format!("bad cell size `{c}`"))?;
            let bin = b.parse::<u64>().map_err(|_| format!("bad bin width `{b}`"))?;
            Ok(Rung::new(level, cell, bin))
        })
        .collect()
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse `{v}`"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, path)
    }

    /// Parses `text`; `path` only labels errors.
    pub fn parse_str(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut origin = (cfg.population.grid.origin().lat(), cfg.population.grid.origin().lon());
        let mut cell = cfg.population.grid.cell_deg();
        let mut dims = (cfg.population.grid.n_rows(), cfg.population.grid.n_cols());
        let mut grid_line = None;
        for e in entries(text, path)? {
            let p = &mut cfg.population;
            let s = &mut cfg.sweep;
            let applied: std::result::Result<(), String> = (|| {
                match e.key {
                    "paths.pings" => cfg.paths.pings = Some(e.value.into()),
                    "paths.truth" => cfg.paths.truth = Some(e.value.into()),
                    "paths.out_dir" => cfg.paths.out_dir = Some(e.value.into()),
                    "log.level" => cfg.log_level = Some(e.value.to_string()),
                    "population.users" => p.n_users = parse(e.value)?,
                    "population.days" => p.n_days = parse(e.value)?,
                    "population.ping_rate" => p.ping_rate = parse(e.value)?,
                    "population.p_explore" => p.p_explore = parse(e.value)?,
                    "population.n_leisure" => p.n_leisure = parse(e.value)?,
                    "population.gps_noise_m" => p.gps_noise_m = parse(e.value)?,
                    "grid.origin_lat" => origin.0 = parse(e.value)?,
                    "grid.origin_lon" => origin.1 = parse(e.value)?,
                    "grid.cell_deg" => cell = parse(e.value)?,
                    "grid.rows" => dims.0 = parse(e.value)?,
                    "grid.cols" => dims.1 = parse(e.value)?,
                    "sweep.task_bin_s" => s.task_bin_seconds = parse(e.value)?,
                    "sweep.rungs" => s.rungs = parse_rungs(e.value)?,
                    "unicity.p" => s.unicity.p = parse(e.value)?,
                    "unicity.targets" => s.unicity.n_targets = parse(e.value)?,
                    "unicity.trials" => s.unicity.trials_per_target = parse(e.value)?,
                    "unicity.mode" => {
                        s.unicity.mode = match e.value {
                            "sampled" => TrialMode::Sampled,
                            "exhaustive" => TrialMode::Exhaustive,
                            "trace_pings" => TrialMode::TracePings,
                            v => return Err(format!("unknown mode `{v}` (sampled, exhaustive, trace_pings)")),
                        }
                    }
                    "unicity.min_p_threshold" => s.min_p_threshold = parse(e.value)?,
                    "unicity.max_p" => s.max_p = parse(e.value)?,
                    "utility.w_density" => s.weights.density = parse(e.value)?,
                    "utility.w_od" => s.weights.od = parse(e.value)?,
                    "utility.w_home" => s.weights.home = parse(e.value)?,
                    "utility.w_foot_traffic" => s.weights.foot_traffic = parse(e.value)?,
                    "night.start_hour" => s.night.start_hour = parse(e.value)?,
                    "night.end_hour" => s.night.end_hour = parse(e.value)?,
                    k => return Err(format!("unknown key `{k}`")),
                }
                Ok(())
            })();
            applied.map_err(|reason| Error::ConfigParse {
                path: path.to_path_buf(),
                line: e.line,
                reason,
            })?;
            if e.key.starts_with("grid.") {
                grid_line = Some(e.line);
            }
        }
        let grid = GeoPoint::new(origin.0, origin.1)
            .and_then(|o| ZoneGrid::new(o, cell, dims.0, dims.1))
            .map_err(|err| match grid_line {
                Some(line) => Error::ConfigParse {
                    path: path.to_path_buf(),
                    line,
                    reason: err.to_string(),
                },
                None => err,
            })?;
        cfg.population.grid = grid;
        cfg.sweep.base_grid = grid;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.sweep.validate()
    }
}
