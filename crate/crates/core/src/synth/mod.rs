//! Synthetic count fields with planted structure, and brute-force reference
//! implementations of every statistic in the crate (see [`oracle`]).
//!
//! Counts are Poisson per cell. The intensity of a cell is
//! `baseline * (1 + Σ amplitude)` over the blobs whose Chebyshev distance to
//! the cell is at most their radius. The second variable uses `y_blobs` (the
//! first variable's blobs when absent) and `y_baseline` (the first baseline
//! when absent). `coupling` is the correlation of the Gaussian copula that
//! couples the two Poisson draws of each cell: `1` with equal intensities
//! produces identical fields, `-1` antithetic ones, `0` independent ones.

pub mod oracle;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::{CellVariable, EventPoint, GridSpec};
use crate::perm::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub row: usize,
    pub col: usize,
    /// Chebyshev radius in cells.
    pub radius: usize,
    /// Relative intensity added inside the blob.
    pub amplitude: f64,
}

impl Blob {
    pub fn covers(&self, row: usize, col: usize) -> bool {
        self.chebyshev(row, col) <= self.radius
    }

    pub fn chebyshev(&self, row: usize, col: usize) -> usize {
        row.abs_diff(self.row).max(col.abs_diff(self.col))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiLayer {
    pub kind: String,
    /// Expected POIs per cell away from any blob.
    pub baseline: f64,
    /// Multiplier on the first variable's blob excess.
    #[serde(default)]
    pub affinity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: GridSpec,
    pub baseline_intensity: f64,
    #[serde(default)]
    pub blobs: Vec<Blob>,
    #[serde(default)]
    pub coupling: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_baseline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_blobs: Option<Vec<Blob>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub poi_layers: Vec<PoiLayer>,
}

impl Scenario {
    pub fn new(grid: GridSpec, baseline_intensity: f64, seed: u64) -> Self {
        Self {
            grid,
            baseline_intensity,
            blobs: Vec::new(),
            coupling: 0.0,
            seed,
            y_baseline: None,
            y_blobs: None,
            poi_layers: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.baseline_intensity) || !self.y_baseline.is_none_or(nonneg) {
            return Err(Error::validation("baseline intensities must be finite and >= 0"));
        }
        if !(-1.0..=1.0).contains(&self.coupling) {
            return Err(Error::validation(format!(
                "coupling must lie in [-1, 1], got {}",
                self.coupling
            )));
        }
        let all_blobs = self.blobs.iter().chain(self.y_blobs.iter().flatten());
        for b in all_blobs {
            if !nonneg(b.amplitude) {
                return Err(Error::validation("blob amplitude must be finite and >= 0"));
            }
            if b.row >= self.grid.n_rows || b.col >= self.grid.n_cols {
                return Err(Error::validation(format!(
                    "blob center ({}, {}) lies outside the grid",
                    b.row, b.col
                )));
            }
        }
        for layer in &self.poi_layers {
            if !nonneg(layer.baseline) || !nonneg(layer.affinity) {
                return Err(Error::validation(format!(
                    "POI layer `{}` needs finite non-negative baseline and affinity",
                    layer.kind
                )));
            }
        }
        Ok(())
    }

    /// `Σ amplitude` over covering blobs, per cell.
    fn excess(&self, blobs: &[Blob]) -> Vec<f64> {
        (0..self.grid.n_cells())
            .map(|id| {
                let (r, c) = self.grid.row_col(id);
                blobs.iter().filter(|b| b.covers(r, c)).map(|b| b.amplitude).sum()
            })
            .collect()
    }

    pub fn x_intensity(&self) -> Vec<f64> {
        self.excess(&self.blobs)
            .into_iter()
            .map(|e| self.baseline_intensity * (1.0 + e))
            .collect()
    }

    pub fn y_intensity(&self) -> Vec<f64> {
        let blobs = self.y_blobs.as_deref().unwrap_or(&self.blobs);
        let base = self.y_baseline.unwrap_or(self.baseline_intensity);
        self.excess(blobs)
            .into_iter()
            .map(|e| base * (1.0 + e))
            .collect()
    }
}

fn std_normal_cdf(g: f64) -> f64 {
    0.5 * erfc(-g / std::f64::consts::SQRT_2)
}

/// Poisson(λ) quantile at `Φ(g)`, the copula transform of a standard normal draw.
pub(crate) fn poisson_from_normal(g: f64, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda > 500.0 {
        return (lambda + lambda.sqrt() * g).round().max(0.0) as u64;
    }
    // walk from whichever tail is nearer to keep the target away from 1
    if g <= 0.0 {
        let u = std_normal_cdf(g);
        let (mut k, mut pmf) = (0u64, (-lambda).exp());
        let mut cdf = pmf;
        while cdf < u {
            k += 1;
            pmf *= lambda / k as f64;
            cdf += pmf;
        }
        k
    } else {
        let target = std_normal_cdf(-g); // survival probability
        let cap = (lambda + 40.0 * lambda.sqrt() + 100.0) as u64;
        let (mut k, mut pmf) = (0u64, (-lambda).exp());
        let mut below = pmf; // P(X <= k)
        while 1.0 - below > target && k < cap {
            k += 1;
            pmf *= lambda / k as f64;
            below += pmf;
        }
        k
    }
}

/// Draws the two count fields of a scenario.
pub fn gen_counts(s: &Scenario) -> Result<(CellVariable, CellVariable)> {
    s.validate()?;
    let lx = s.x_intensity();
    let ly = s.y_intensity();
    let rho = s.coupling;
    let tail = (1.0 - rho * rho).max(0.0).sqrt();
    let mut rng = substream(s.seed, 0);
    let mut xs = Vec::with_capacity(lx.len());
    let mut ys = Vec::with_capacity(ly.len());
    for (&a, &b) in lx.iter().zip(&ly) {
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        xs.push(poisson_from_normal(g1, a) as f64);
        ys.push(poisson_from_normal(rho * g1 + tail * g2, b) as f64);
    }
    Ok((
        CellVariable::new("crash_count", xs)?,
        CellVariable::new("highg_count", ys)?,
    ))
}

#[derive(Debug, Clone)]
pub struct SynthPoints {
    pub crashes: Vec<EventPoint>,
    pub highg: Vec<EventPoint>,
    pub pois: Vec<EventPoint>,
}

/// Scatters `count` points uniformly inside a cell, kept off the edges.
fn scatter<R: Rng>(rng: &mut R, g: &GridSpec, cell: usize, count: u64, kind: Option<&str>, out: &mut Vec<EventPoint>) {
    let (x0, y0, _, _) = g.cell_bounds(cell);
    let s = g.cell_size;
    for _ in 0..count {
        let fx = 0.001 + 0.998 * rng.random::<f64>();
        let fy = 0.001 + 0.998 * rng.random::<f64>();
        out.push(EventPoint {
            x: x0 + fx * s,
            y: y0 + fy * s,
            kind: kind.map(str::to_string),
        });
    }
}

/// Point layers whose aggregation reproduces [`gen_counts`] exactly.
pub fn gen_points(s: &Scenario) -> Result<SynthPoints> {
    let (x, y) = gen_counts(s)?;
    let g = &s.grid;
    let mut rng = substream(s.seed, 1);
    let mut crashes = Vec::new();
    let mut highg = Vec::new();
    for cell in 0..g.n_cells() {
        scatter(&mut rng, g, cell, x.values()[cell] as u64, None, &mut crashes);
        scatter(&mut rng, g, cell, y.values()[cell] as u64, None, &mut highg);
    }
    let excess = s.excess(&s.blobs);
    let mut pois = Vec::new();
    for (li, layer) in s.poi_layers.iter().enumerate() {
        let mut rng = substream(s.seed, 2 + li as u64);
        for (cell, e) in excess.iter().enumerate() {
            let lambda = layer.baseline * (1.0 + layer.affinity * e);
            let count = if lambda > 0.0 {
                let d = Poisson::new(lambda).map_err(|e| Error::validation(e.to_string()))?;
                d.sample(&mut rng) as u64
            } else {
                0
            };
            scatter(&mut rng, g, cell, count, Some(&layer.kind), &mut pois);
        }
    }
    Ok(SynthPoints {
        crashes,
        highg,
        pois,
    })
}
