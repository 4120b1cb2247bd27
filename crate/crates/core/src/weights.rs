//! Sparse spatial weights over grid cells.
//!
//! Rows are stored in compressed sparse row form. Grids of a few tens of
//! thousands of cells have at most nine entries per row, so dense storage is
//! never used.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Contiguity {
    #[default]
    Queen,
    Rook,
}

impl std::str::FromStr for Contiguity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "queen" => Ok(Contiguity::Queen),
            "rook" => Ok(Contiguity::Rook),
            other => Err(Error::validation(format!(
                "unknown contiguity `{other}` (expected queen or rook)"
            ))),
        }
    }
}

impl std::fmt::Display for Contiguity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Contiguity::Queen => "queen",
            Contiguity::Rook => "rook",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    Binary,
    RowStandardized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsMatrix {
    n: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
    standardization: Standardization,
    self_included: bool,
}

const ROW_SUM_TOL: f64 = 1e-12;

impl WeightsMatrix {
    /// Builds a matrix from per-row `(j, w)` lists. Rows are sorted by `j`.
    pub fn from_rows(
        rows: Vec<Vec<(usize, f64)>>,
        standardization: Standardization,
        self_included: bool,
    ) -> Result<Self> {
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            for pair in row.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(Error::validation(format!(
                        "duplicate neighbor {} in row {i}",
                        pair[0].0
                    )));
                }
            }
            for (j, w) in row {
                if j >= n {
                    return Err(Error::validation(format!(
                        "neighbor index {j} out of range in row {i}"
                    )));
                }
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::validation(format!(
                        "weight w[{i},{j}] = {w} must be positive"
                    )));
                }
                indices.push(j);
                weights.push(w);
            }
            offsets.push(indices.len());
        }
        let m = Self {
            n,
            offsets,
            indices,
            weights,
            standardization,
            self_included,
        };
        m.check_tags()?;
        Ok(m)
    }

    fn check_tags(&self) -> Result<()> {
        for i in 0..self.n {
            let (idx, w) = self.row(i);
            if self.self_included && !idx.contains(&i) {
                return Err(Error::validation(format!(
                    "row {i} lacks a self weight but the matrix is tagged self-included"
                )));
            }
            if !self.self_included && idx.contains(&i) {
                return Err(Error::validation(format!(
                    "row {i} has a self weight but the matrix is not tagged self-included"
                )));
            }
            match self.standardization {
                Standardization::Binary => {
                    if w.iter().any(|&v| v != 1.0) {
                        return Err(Error::validation(format!("row {i} is not binary")));
                    }
                }
                Standardization::RowStandardized => {
                    if !w.is_empty() && (w.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOL {
                        return Err(Error::validation(format!("row {i} does not sum to 1")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contiguity(g: &GridSpec, kind: Contiguity) -> Self {
        let (rows, cols) = (g.n_rows as isize, g.n_cols as isize);
        let n = g.n_cells();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(n * 8);
        offsets.push(0);
        for r in 0..rows {
            for c in 0..cols {
                // row-major scan keeps neighbor ids ascending
                for dr in -1..=1isize {
                    for dc in -1..=1isize {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        if kind == Contiguity::Rook && dr != 0 && dc != 0 {
                            continue;
                        }
                        let (nr, nc) = (r + dr, c + dc);
                        if nr >= 0 && nr < rows && nc >= 0 && nc < cols {
                            indices.push((nr * cols + nc) as usize);
                        }
                    }
                }
                offsets.push(indices.len());
            }
        }
        let weights = vec![1.0; indices.len()];
        Self {
            n,
            offsets,
            indices,
            weights,
            standardization: Standardization::Binary,
            self_included: false,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn self_included(&self) -> bool {
        self.self_included
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.indices[a..b], &self.weights[a..b])
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// Number of neighbors other than the cell itself.
    pub fn neighbor_count(&self, i: usize) -> usize {
        let (idx, _) = self.row(i);
        idx.len() - usize::from(self.self_included && idx.contains(&i))
    }

    pub fn is_isolate(&self, i: usize) -> bool {
        self.neighbor_count(i) == 0
    }

    pub fn isolates(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.is_isolate(i)).collect()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Scales each nonempty row to sum 1. Isolates keep their empty rows.
    pub fn row_standardize(&self) -> Self {
        let mut weights = self.weights.clone();
        for i in 0..self.n {
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            let sum: f64 = weights[a..b].iter().sum();
            if sum > 0.0 {
                weights[a..b].iter_mut().for_each(|w| *w /= sum);
            }
        }
        Self {
            weights,
            standardization: Standardization::RowStandardized,
            ..self.clone()
        }
    }

    /// Adds `w_ii = 1` to every row (the starred Gi* neighborhood).
    pub fn include_self(&self) -> Result<Self> {
        if self.self_included {
            return Err(Error::validation("weights already include self"));
        }
        if self.standardization != Standardization::Binary {
            return Err(Error::validation("self inclusion requires binary weights"));
        }
        let rows = (0..self.n)
            .map(|i| {
                let (idx, w) = self.row(i);
                let mut row: Vec<(usize, f64)> = idx.iter().copied().zip(w.iter().copied()).collect();
                row.push((i, 1.0));
                row
            })
            .collect();
        Self::from_rows(rows, Standardization::Binary, true)
    }

    /// `Σ_j w_ij v_j` for every row.
    pub fn lag(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (idx, w) = self.row(i);
                idx.iter().zip(w).map(|(&j, &wij)| wij * v[j]).sum()
            })
            .collect()
    }

    /// Writes `i,j,w` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["i", "j", "w"])?;
        for i in 0..self.n {
            let (idx, w) = self.row(i);
            for (&j, &wij) in idx.iter().zip(w) {
                wtr.write_record([i.to_string(), j.to_string(), wij.to_string()])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<weights>", e))?;
        Ok(())
    }

    /// Reads `i,j,w` rows for an `n`-cell matrix. The standardization tag is
    /// inferred (all ones → binary, unit row sums → row-standardized); the
    /// self-included tag is set when every row carries a diagonal entry.
    pub fn read_csv<R: Read>(input: R, n: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |k: usize| rec.get(k).unwrap_or("").trim();
            let parse_err = |what: &str| Error::Parse {
                path: "<weights>".into(),
                line,
                message: format!("invalid {what}"),
            };
            let i: usize = field(0).parse().map_err(|_| parse_err("i"))?;
            let j: usize = field(1).parse().map_err(|_| parse_err("j"))?;
            let w: f64 = field(2).parse().map_err(|_| parse_err("w"))?;
            if i >= n {
                return Err(Error::Parse {
                    path: "<weights>".into(),
                    line,
                    message: format!("row index {i} out of range for {n} cells"),
                });
            }
            rows[i].push((j, w));
        }
        let binary = rows.iter().flatten().all(|&(_, w)| w == 1.0);
        let standardization = if binary {
            Standardization::Binary
        } else {
            Standardization::RowStandardized
        };
        let diag = rows
            .iter()
            .enumerate()
            .filter(|(i, r)| r.iter().any(|&(j, _)| j == *i))
            .count();
        let self_included = n > 0 && diag == n;
        Self::from_rows(rows, standardization, self_included)
    }
}

pub fn queen_weights(g: &GridSpec) -> WeightsMatrix {
    WeightsMatrix::contiguity(g, Contiguity::Queen)
}

pub fn rook_weights(g: &GridSpec) -> WeightsMatrix {
    WeightsMatrix::contiguity(g, Contiguity::Rook)
}

pub fn row_standardize(w: &WeightsMatrix) -> WeightsMatrix {
    w.row_standardize()
}

pub fn include_self(w: &WeightsMatrix) -> Result<WeightsMatrix> {
    w.include_self()
}
