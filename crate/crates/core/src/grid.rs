//! Uniform square grid over a planar study region.
//!
//! Cell `(r, c)` covers the half-open square
//! `[origin_x + c*s, origin_x + (c+1)*s) x [origin_y + r*s, origin_y + (r+1)*s)`
//! and has id `r * n_cols + c`. Coordinates are projected meters; nothing here
//! knows about geodetic systems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cell edge length in meters.
pub const DEFAULT_CELL_SIZE: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

/// A square ring `[ll, lr, ur, ul, ll]`, counter-clockwise.
pub type CellRing = [[f64; 2]; 5];

impl GridSpec {
    /// Grid anchored at the bbox lower-left corner, covering it by ceiling division.
    pub fn covering(bbox: &BBox, cell_size: f64) -> Result<Self> {
        let coords = [bbox.min_x, bbox.min_y, bbox.max_x, bbox.max_y];
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("bounding box coordinates must be finite"));
        }
        if !(bbox.max_x > bbox.min_x && bbox.max_y > bbox.min_y) {
            return Err(Error::validation(format!(
                "degenerate bounding box ({}, {}, {}, {})",
                bbox.min_x, bbox.min_y, bbox.max_x, bbox.max_y
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::validation(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        let n_cols = ((bbox.max_x - bbox.min_x) / cell_size).ceil() as usize;
        let n_rows = ((bbox.max_y - bbox.min_y) / cell_size).ceil() as usize;
        Self::from_parts(bbox.min_x, bbox.min_y, cell_size, n_rows.max(1), n_cols.max(1))
    }

    pub fn from_parts(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
    ) -> Result<Self> {
        if !(origin_x.is_finite() && origin_y.is_finite()) {
            return Err(Error::validation("grid origin must be finite"));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::validation(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::validation("grid must have at least one row and column"));
        }
        Ok(Self {
            origin_x,
            origin_y,
            cell_size,
            n_rows,
            n_cols,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn cell_id(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        row * self.n_cols + col
    }

    pub fn row_col(&self, cell_id: usize) -> (usize, usize) {
        (cell_id / self.n_cols, cell_id % self.n_cols)
    }

    /// `(x_lo, y_lo, x_hi, y_hi)` of a cell.
    pub fn cell_bounds(&self, cell_id: usize) -> (f64, f64, f64, f64) {
        let (r, c) = self.row_col(cell_id);
        let s = self.cell_size;
        (
            self.origin_x + c as f64 * s,
            self.origin_y + r as f64 * s,
            self.origin_x + (c + 1) as f64 * s,
            self.origin_y + (r + 1) as f64 * s,
        )
    }

    /// Upper-right corner of the covered extent.
    pub fn extent_max(&self) -> (f64, f64) {
        (
            self.origin_x + self.n_cols as f64 * self.cell_size,
            self.origin_y + self.n_rows as f64 * self.cell_size,
        )
    }

    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        let c = axis_index(x, self.origin_x, self.cell_size, self.n_cols)?;
        let r = axis_index(y, self.origin_y, self.cell_size, self.n_rows)?;
        Some(self.cell_id(r, c))
    }

    pub fn ring(&self, cell_id: usize) -> CellRing {
        let (x0, y0, x1, y1) = self.cell_bounds(cell_id);
        [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
    }

    pub fn polygons(&self) -> Vec<CellRing> {
        (0..self.n_cells()).map(|id| self.ring(id)).collect()
    }
}

/// Index of the half-open interval `[origin + k*size, origin + (k+1)*size)` holding `v`.
///
/// The floor estimate is corrected against the same products used for cell
/// bounds, so locate and ring vertices never disagree on an edge.
fn axis_index(v: f64, origin: f64, size: f64, n: usize) -> Option<usize> {
    if !v.is_finite() || v < origin {
        return None;
    }
    let k = ((v - origin) / size).floor();
    if k > n as f64 {
        return None;
    }
    let mut k = k as usize;
    if k > 0 && v < origin + k as f64 * size {
        k -= 1;
    } else if v >= origin + (k + 1) as f64 * size {
        k += 1;
    }
    (k < n).then_some(k)
}

pub fn make_grid(bbox: &BBox, cell_size: f64) -> Result<GridSpec> {
    GridSpec::covering(bbox, cell_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPoint {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

impl EventPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, kind: None }
    }

    pub fn with_kind(x: f64, y: f64, kind: impl Into<String>) -> Self {
        Self {
            x,
            y,
            kind: Some(kind.into()),
        }
    }
}

pub fn locate(p: &EventPoint, g: &GridSpec) -> Option<usize> {
    g.locate(p.x, p.y)
}

/// One non-negative value per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVariable {
    name: String,
    values: Vec<f64>,
}

impl CellVariable {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(format!(
                "variable `{name}`: cell {i} has invalid value {}",
                values[i]
            )));
        }
        Ok(Self { name, values })
    }

    /// Checks that the variable was built against `g`.
    pub fn for_grid(self, g: &GridSpec) -> Result<Self> {
        if self.values.len() != g.n_cells() {
            return Err(Error::LengthMismatch {
                expected: g.n_cells(),
                actual: self.values.len(),
            });
        }
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationSummary {
    pub total_cells: usize,
    pub in_extent: usize,
    pub dropped: usize,
}

impl std::fmt::Display for AggregationSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "cells={} in_extent={} dropped={}",
            self.total_cells, self.in_extent, self.dropped
        )
    }
}

#[derive(Debug, Clone)]
pub struct Aggregation {
    pub counts: CellVariable,
    pub summary: AggregationSummary,
}

const SHARD: usize = 16 * 1024;

/// Counts points per cell. Points outside the grid are dropped and reported.
pub fn aggregate_points(points: &[EventPoint], g: &GridSpec, name: &str) -> Aggregation {
    let n = g.n_cells();
    let counts: Vec<u64> = points
        .par_chunks(SHARD)
        .fold(
            || vec![0u64; n],
            |mut acc, chunk| {
                for p in chunk {
                    if let Some(id) = locate(p, g) {
                        acc[id] += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let in_extent = counts.iter().sum::<u64>() as usize;
    let values = counts.into_iter().map(|c| c as f64).collect();
    Aggregation {
        counts: CellVariable {
            name: name.to_string(),
            values,
        },
        summary: AggregationSummary {
            total_cells: n,
            in_extent,
            dropped: points.len() - in_extent,
        },
    }
}

pub fn grid_polygons(g: &GridSpec) -> Vec<CellRing> {
    g.polygons()
}
