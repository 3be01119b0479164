//! CSV formats for pings, ground truth and the level records.
//!
//! All writers go through [`write_atomic`]: output lands in a temporary file
//! next to the destination and is renamed into place only on success.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{AggPing, CoarseAggPing, CoarsePing, Fix, GeoPoint, Timestamp, Trace, ZoneId};

pub const PING_HEADER: &str = "user_id,lat,lon,t";
pub const TRUTH_HEADER: &str = "user_id,home_zone,work_zone";
pub const LEVEL1_HEADER: &str = "user_id,zone,time_bin";
pub const LEVEL2_HEADER: &str = "home_zone,lat,lon,time_bin";
pub const LEVEL3_HEADER: &str = "home_zone,visit_zone,time_bin";

/// Writes `path` via a sibling temp file that is renamed on success.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::Builder::new()
        .prefix(".geotrace-")
        .suffix(".tmp")
        .tempfile_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Decimal degrees with at least five fraction digits. Uses the shortest
/// representation that parses back to the same `f64`, so reading a written
/// file reproduces the coordinates exactly.
pub fn format_degrees(x: f64) -> String {
    let mut s = format!("{x}");
    let frac = match s.find('.') {
        Some(i) => s.len() - i - 1,
        None => {
            s.push('.');
            0
        }
    };
    for _ in frac..5 {
        s.push('0');
    }
    s
}

pub fn write_pings(traces: &[Trace], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{PING_HEADER}")?;
        for tr in traces {
            for f in tr.fixes() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    tr.user_id(),
                    format_degrees(f.point.lat()),
                    format_degrees(f.point.lon()),
                    f.t.0
                )?;
            }
        }
        Ok(())
    })
}

struct Rows {
    path: PathBuf,
    reader: csv::Reader<File>,
}

impl Rows {
    fn open(path: &Path, header: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(path)?;
        let mut first = csv::StringRecord::new();
        if !reader.read_record(&mut first)? {
            return Err(malformed(path, 1, "missing header"));
        }
        let got = first.iter().collect::<Vec<_>>().join(",");
        if got != header {
            return Err(malformed(path, 1, &format!("expected header `{header}`, got `{got}`")));
        }
        Ok(Self {
            path: path.to_path_buf(),
            reader,
        })
    }

    /// Calls `f` with each row's fields and line number.
    fn for_each<F>(mut self, n_fields: usize, mut f: F) -> Result<()>
    where
        F: FnMut(&[&str], u64) -> std::result::Result<(), String>,
    {
        let mut rec = csv::StringRecord::new();
        while self.reader.read_record(&mut rec)? {
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != n_fields {
                return Err(malformed(
                    &self.path,
                    line,
                    &format!("expected {n_fields} fields, got {}", rec.len()),
                ));
            }
            let fields: Vec<&str> = rec.iter().collect();
            f(&fields, line).map_err(|reason| malformed(&self.path, line, &reason))?;
        }
        Ok(())
    }
}

fn malformed(path: &Path, line: u64, reason: &str) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    }
}

fn parse_f64(s: &str, what: &str) -> std::result::Result<f64, String> {
    s.parse().map_err(|_| format!("bad {what} `{s}`"))
}

fn parse_u64(s: &str, what: &str) -> std::result::Result<u64, String> {
    s.parse().map_err(|_| format!("bad {what} `{s}`"))
}

fn parse_point(lat: &str, lon: &str) -> std::result::Result<GeoPoint, String> {
    GeoPoint::new(parse_f64(lat, "lat")?, parse_f64(lon, "lon")?).map_err(|e| e.to_string())
}

fn non_empty(s: &str, what: &str) -> std::result::Result<String, String> {
    if s.is_empty() {
        Err(format!("empty {what}"))
    } else {
        Ok(s.to_string())
    }
}

/// Reads a ping CSV into traces ordered by user id, each sorted by time.
pub fn read_pings(path: &Path) -> Result<Vec<Trace>> {
    let mut by_user: BTreeMap<String, Vec<Fix>> = BTreeMap::new();
    Rows::open(path, PING_HEADER)?.for_each(4, |f, _| {
        let user = non_empty(f[0], "user_id")?;
        let point = parse_point(f[1], f[2])?;
        let t = Timestamp(parse_u64(f[3], "t")?);
        by_user.entry(user).or_default().push(Fix { point, t });
        Ok(())
    })?;
    by_user
        .into_iter()
        .map(|(user, fixes)| Trace::new(user, fixes))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRow {
    pub user_id: String,
    pub home_zone: ZoneId,
    pub work_zone: ZoneId,
}

pub fn write_truth(rows: &[TruthRow], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{TRUTH_HEADER}")?;
        for r in rows {
            writeln!(w, "{},{},{}", r.user_id, r.home_zone, r.work_zone)?;
        }
        Ok(())
    })
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let mut out = Vec::new();
    Rows::open(path, TRUTH_HEADER)?.for_each(3, |f, _| {
        out.push(TruthRow {
            user_id: non_empty(f[0], "user_id")?,
            home_zone: ZoneId::new(non_empty(f[1], "home_zone")?),
            work_zone: ZoneId::new(non_empty(f[2], "work_zone")?),
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_level1(records: &[CoarsePing], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{LEVEL1_HEADER}")?;
        for r in records {
            writeln!(w, "{},{},{}", r.user_id, r.zone, r.time_bin)?;
        }
        Ok(())
    })
}

pub fn read_level1(path: &Path) -> Result<Vec<CoarsePing>> {
    let mut out = Vec::new();
    Rows::open(path, LEVEL1_HEADER)?.for_each(3, |f, _| {
        out.push(CoarsePing {
            user_id: non_empty(f[0], "user_id")?,
            zone: ZoneId::new(non_empty(f[1], "zone")?),
            time_bin: parse_u64(f[2], "time_bin")?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_level2(records: &[AggPing], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{LEVEL2_HEADER}")?;
        for r in records {
            writeln!(
                w,
                "{},{},{},{}",
                r.home_zone,
                format_degrees(r.point.lat()),
                format_degrees(r.point.lon()),
                r.time_bin
            )?;
        }
        Ok(())
    })
}

pub fn read_level2(path: &Path) -> Result<Vec<AggPing>> {
    let mut out = Vec::new();
    Rows::open(path, LEVEL2_HEADER)?.for_each(4, |f, _| {
        out.push(AggPing {
            home_zone: ZoneId::new(non_empty(f[0], "home_zone")?),
            point: parse_point(f[1], f[2])?,
            time_bin: parse_u64(f[3], "time_bin")?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_level3(records: &[CoarseAggPing], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{LEVEL3_HEADER}")?;
        for r in records {
            writeln!(w, "{},{},{}", r.home_zone, r.visit_zone, r.time_bin)?;
        }
        Ok(())
    })
}

pub fn read_level3(path: &Path) -> Result<Vec<CoarseAggPing>> {
    let mut out = Vec::new();
    Rows::open(path, LEVEL3_HEADER)?.for_each(3, |f, _| {
        out.push(CoarseAggPing {
            home_zone: ZoneId::new(non_empty(f[0], "home_zone")?),
            visit_zone: ZoneId::new(non_empty(f[1], "visit_zone")?),
            time_bin: parse_u64(f[2], "time_bin")?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Returns the header line of a CSV file, used to detect which level a file holds.
pub fn sniff_header(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().next().unwrap_or("").trim_end_matches('\r').to_string())
}
