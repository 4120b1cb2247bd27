//! CSV and GeoJSON formats used between pipeline stages.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back from an intermediate file is bit-identical to the one written.
//! GeoJSON coordinates are the planar meters of the grid, passed through
//! unchanged rather than converted to longitude/latitude.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::characterize::MwTable;
use crate::error::{Error, Result};
use crate::globalstats::GlobalStatResult;
use crate::grid::{CellVariable, EventPoint, GridSpec};
use crate::localstats::{HotspotClass, LisaQuadrant, LocalStatRow};

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_error(path, line, e.to_string())
}

/// Typed view of a CSV file with named columns and line-numbered errors.
struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read<R: Read>(path: &Path, input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| parse_error(&self.path, 1, format!("missing column `{name}`")))
    }

    fn field<'r>(&self, line: u64, rec: &'r csv::StringRecord, col: usize) -> Result<&'r str> {
        rec.get(col)
            .ok_or_else(|| parse_error(&self.path, line, format!("missing field {}", col + 1)))
    }

    fn parse<T: std::str::FromStr>(&self, line: u64, rec: &csv::StringRecord, col: usize) -> Result<T> {
        let raw = self.field(line, rec, col)?;
        raw.parse().map_err(|_| {
            parse_error(
                &self.path,
                line,
                format!("invalid value `{raw}` in column `{}`", self.headers[col]),
            )
        })
    }

    fn parse_opt<T: std::str::FromStr>(&self, line: u64, rec: &csv::StringRecord, col: usize) -> Result<Option<T>> {
        if self.field(line, rec, col)?.is_empty() {
            Ok(None)
        } else {
            self.parse(line, rec, col).map(Some)
        }
    }
}

fn finite(path: &Path, line: u64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_error(path, line, format!("non-finite coordinate {v}")))
    }
}

/// Point CSV: columns `x,y` and an optional `kind` (required when `require_kind`).
pub fn read_points_from<R: Read>(path: &Path, input: R, require_kind: bool) -> Result<Vec<EventPoint>> {
    let t = Table::read(path, input)?;
    let cx = t.require("x")?;
    let cy = t.require("y")?;
    let ck = if require_kind {
        Some(t.require("kind")?)
    } else {
        t.column("kind")
    };
    t.rows
        .iter()
        .map(|(line, rec)| {
            let x = finite(path, *line, t.parse(*line, rec, cx)?)?;
            let y = finite(path, *line, t.parse(*line, rec, cy)?)?;
            let kind = match ck {
                Some(c) => {
                    let k = t.field(*line, rec, c)?;
                    if k.is_empty() {
                        if require_kind {
                            return Err(parse_error(path, *line, "empty `kind`"));
                        }
                        None
                    } else {
                        Some(k.to_string())
                    }
                }
                None => None,
            };
            Ok(EventPoint { x, y, kind })
        })
        .collect()
}

pub fn read_points(path: &Path, require_kind: bool) -> Result<Vec<EventPoint>> {
    read_points_from(path, open(path)?, require_kind)
}

pub fn write_points<W: Write>(out: W, points: &[EventPoint], with_kind: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if with_kind {
        w.write_record(["kind", "x", "y"])?;
        for p in points {
            w.write_record([
                p.kind.as_deref().unwrap_or(""),
                &p.x.to_string(),
                &p.y.to_string(),
            ])?;
        }
    } else {
        w.write_record(["x", "y"])?;
        for p in points {
            w.write_record([p.x.to_string(), p.y.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<points>", e))?;
    Ok(())
}

/// `cell_id,row,col,<name>...`
pub fn write_counts<W: Write>(out: W, g: &GridSpec, vars: &[&CellVariable]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cell_id".to_string(), "row".into(), "col".into()];
    header.extend(vars.iter().map(|v| v.name().to_string()));
    w.write_record(&header)?;
    for id in 0..g.n_cells() {
        let (r, c) = g.row_col(id);
        let mut rec = vec![id.to_string(), r.to_string(), c.to_string()];
        rec.extend(vars.iter().map(|v| v.values()[id].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<counts>", e))?;
    Ok(())
}

/// Reads the named columns of a counts CSV written by [`write_counts`].
pub fn read_counts(path: &Path, g: &GridSpec, names: &[&str]) -> Result<Vec<CellVariable>> {
    let t = Table::read(path, open(path)?)?;
    let cid = t.require("cell_id")?;
    let cols: Vec<usize> = names.iter().map(|n| t.require(n)).collect::<Result<_>>()?;
    if t.rows.len() != g.n_cells() {
        return Err(parse_error(
            path,
            1,
            format!("expected {} cells, found {}", g.n_cells(), t.rows.len()),
        ));
    }
    let mut values = vec![vec![0.0; g.n_cells()]; names.len()];
    for (line, rec) in &t.rows {
        let id: usize = t.parse(*line, rec, cid)?;
        if id >= g.n_cells() {
            return Err(parse_error(path, *line, format!("cell_id {id} out of range")));
        }
        for (k, &c) in cols.iter().enumerate() {
            values[k][id] = t.parse(*line, rec, c)?;
        }
    }
    names
        .iter()
        .zip(values)
        .map(|(n, v)| CellVariable::new(*n, v))
        .collect()
}

pub fn write_global<W: Write>(out: W, results: &[GlobalStatResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "statistic", "expected", "pseudo_p", "permutations", "seed"])?;
    for r in results {
        w.write_record([
            r.name.clone(),
            r.statistic.to_string(),
            r.expected_under_null.to_string(),
            r.pseudo_p.to_string(),
            r.n_permutations.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<global>", e))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |p| p.to_string())
}

/// `cell_id,statistic,lag,pseudo_p,isolate,degenerate`
pub fn write_local<W: Write>(out: W, rows: &[LocalStatRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_id", "statistic", "lag", "pseudo_p", "isolate", "degenerate"])?;
    for r in rows {
        w.write_record([
            r.cell_id.to_string(),
            r.statistic.to_string(),
            r.lag.to_string(),
            opt(r.pseudo_p),
            r.isolate.to_string(),
            r.degenerate.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<local>", e))?;
    Ok(())
}

pub fn read_local(path: &Path) -> Result<Vec<LocalStatRow>> {
    let t = Table::read(path, open(path)?)?;
    let cols: Vec<usize> = ["cell_id", "statistic", "lag", "pseudo_p", "isolate", "degenerate"]
        .iter()
        .map(|n| t.require(n))
        .collect::<Result<_>>()?;
    let rows: Vec<LocalStatRow> = t
        .rows
        .iter()
        .map(|(line, rec)| {
            Ok(LocalStatRow {
                cell_id: t.parse(*line, rec, cols[0])?,
                statistic: t.parse(*line, rec, cols[1])?,
                lag: t.parse(*line, rec, cols[2])?,
                pseudo_p: t.parse_opt(*line, rec, cols[3])?,
                isolate: t.parse(*line, rec, cols[4])?,
                degenerate: t.parse(*line, rec, cols[5])?,
            })
        })
        .collect::<Result<_>>()?;
    if rows.iter().enumerate().any(|(i, r)| r.cell_id != i) {
        return Err(parse_error(path, 1, "rows must be ordered by cell_id"));
    }
    Ok(rows)
}

/// Everything known about one cell after classification.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub cell_id: usize,
    pub row: usize,
    pub col: usize,
    pub crash_count: f64,
    pub highg_count: f64,
    pub gi_star: f64,
    pub gi_p: Option<f64>,
    pub hotspot_class: HotspotClass,
    pub bv_moran: f64,
    pub bv_lag: f64,
    pub bv_p: Option<f64>,
    pub lisa_quadrant: LisaQuadrant,
}

const CELL_COLUMNS: [&str; 12] = [
    "cell_id",
    "row",
    "col",
    "crash_count",
    "highg_count",
    "gi_star",
    "gi_p",
    "hotspot_class",
    "bv_moran",
    "bv_lag",
    "bv_p",
    "lisa_quadrant",
];

pub fn write_cells<W: Write>(out: W, cells: &[CellRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CELL_COLUMNS)?;
    for c in cells {
        w.write_record([
            c.cell_id.to_string(),
            c.row.to_string(),
            c.col.to_string(),
            c.crash_count.to_string(),
            c.highg_count.to_string(),
            c.gi_star.to_string(),
            opt(c.gi_p),
            c.hotspot_class.code().to_string(),
            c.bv_moran.to_string(),
            c.bv_lag.to_string(),
            opt(c.bv_p),
            c.lisa_quadrant.code().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<cells>", e))?;
    Ok(())
}

pub fn read_cells(path: &Path) -> Result<Vec<CellRecord>> {
    let t = Table::read(path, open(path)?)?;
    let c: Vec<usize> = CELL_COLUMNS.iter().map(|n| t.require(n)).collect::<Result<_>>()?;
    t.rows
        .iter()
        .map(|(line, rec)| {
            let l = *line;
            Ok(CellRecord {
                cell_id: t.parse(l, rec, c[0])?,
                row: t.parse(l, rec, c[1])?,
                col: t.parse(l, rec, c[2])?,
                crash_count: t.parse(l, rec, c[3])?,
                highg_count: t.parse(l, rec, c[4])?,
                gi_star: t.parse(l, rec, c[5])?,
                gi_p: t.parse_opt(l, rec, c[6])?,
                hotspot_class: t.parse(l, rec, c[7])?,
                bv_moran: t.parse(l, rec, c[8])?,
                bv_lag: t.parse(l, rec, c[9])?,
                bv_p: t.parse_opt(l, rec, c[10])?,
                lisa_quadrant: t.parse(l, rec, c[11])?,
            })
        })
        .collect()
}

fn p_value(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

impl CellRecord {
    pub fn properties(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("cell_id".into(), self.cell_id.into());
        m.insert("row".into(), self.row.into());
        m.insert("col".into(), self.col.into());
        m.insert("crash_count".into(), self.crash_count.into());
        m.insert("highg_count".into(), self.highg_count.into());
        m.insert("gi_star".into(), self.gi_star.into());
        m.insert("gi_p".into(), p_value(self.gi_p));
        m.insert("hotspot_class".into(), self.hotspot_class.code().into());
        m.insert("bv_moran".into(), self.bv_moran.into());
        m.insert("bv_lag".into(), self.bv_lag.into());
        m.insert("bv_p".into(), p_value(self.bv_p));
        m.insert("lisa_quadrant".into(), self.lisa_quadrant.code().into());
        m
    }
}

/// A FeatureCollection with one Polygon per grid cell.
pub fn write_grid_geojson<W, F>(out: W, name: &str, g: &GridSpec, mut properties: F) -> Result<()>
where
    W: Write,
    F: FnMut(usize) -> Map<String, Value>,
{
    let features: Vec<Value> = (0..g.n_cells())
        .map(|id| {
            json!({
                "type": "Feature",
                "id": id,
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [g.ring(id).to_vec()],
                },
                "properties": properties(id),
            })
        })
        .collect();
    let fc = json!({
        "type": "FeatureCollection",
        "name": name,
        "features": features,
    });
    let mut out = out;
    serde_json::to_writer(&mut out, &fc)?;
    out.flush().map_err(|e| Error::io(name, e))?;
    Ok(())
}

/// `spatial_relationship,lisa_classification,cells` in Table-1 order.
pub fn write_lisa_groups<W: Write>(out: W, sizes: &[(LisaQuadrant, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["spatial_relationship", "lisa_classification", "cells"])?;
    for (q, n) in sizes {
        w.write_record([q.relationship(), q.label(), &n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<lisa groups>", e))?;
    Ok(())
}

/// `poi_type,u_statistic,p_value,mean_group_a,mean_group_b,significant`
pub fn write_mann_whitney<W: Write>(out: W, table: &MwTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "poi_type",
        "u_statistic",
        "p_value",
        "mean_group_a",
        "mean_group_b",
        "significant",
    ])?;
    for r in &table.results {
        w.write_record([
            r.poi_type.clone(),
            format!("{:.1}", r.u),
            r.p_value.to_string(),
            r.mean_group_a.to_string(),
            r.mean_group_b.to_string(),
            if r.significant { "True" } else { "False" }.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<mann whitney>", e))?;
    Ok(())
}
