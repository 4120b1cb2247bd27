//! Reference values by direct summation over dense matrices and by exhaustive
//! enumeration. Nothing here calls into the grid, weights or statistics
//! modules: adjacency comes from cell coordinates, standardization and every
//! formula are written out again, and Mann-Whitney U is counted pair by pair.
//! Sizes are capped so the quadratic and exponential loops stay cheap.

use crate::error::{Error, Result};
use crate::weights::Contiguity;

pub const MAX_SPATIAL_CELLS: usize = 400;
pub const MAX_MANN_WHITNEY_TOTAL: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub rows: usize,
    pub cols: usize,
    pub rule: Contiguity,
}

impl Lattice {
    pub fn new(rows: usize, cols: usize, rule: Contiguity) -> Self {
        Self { rows, cols, rule }
    }

    fn n(&self) -> usize {
        self.rows * self.cols
    }

    fn adjacent(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (ri, ci) = ((i / self.cols) as i64, (i % self.cols) as i64);
        let (rj, cj) = ((j / self.cols) as i64, (j % self.cols) as i64);
        let (dr, dc) = ((ri - rj).abs(), (ci - cj).abs());
        match self.rule {
            Contiguity::Queen => dr <= 1 && dc <= 1,
            Contiguity::Rook => dr + dc == 1,
        }
    }

    /// Dense binary adjacency, no diagonal.
    fn binary(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| if self.adjacent(i, j) { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    fn row_standardized(&self) -> Vec<Vec<f64>> {
        self.binary()
            .into_iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                if s == 0.0 {
                    row
                } else {
                    row.into_iter().map(|v| v / s).collect()
                }
            })
            .collect()
    }

    fn check(&self, values: &[f64]) -> Result<()> {
        if self.n() > MAX_SPATIAL_CELLS {
            return Err(Error::SizeLimit {
                limit: format!("spatial oracles are limited to {MAX_SPATIAL_CELLS} cells"),
            });
        }
        if values.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                actual: values.len(),
            });
        }
        Ok(())
    }
}

fn zscores(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len() as f64;
    let mut sum = 0.0;
    for v in x {
        sum += v;
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for v in x {
        ss += (v - mean) * (v - mean);
    }
    if ss == 0.0 {
        return Err(Error::ZeroVariance("oracle input".into()));
    }
    let sd = (ss / n).sqrt();
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

pub fn global_moran(lat: Lattice, x: &[f64]) -> Result<f64> {
    lat.check(x)?;
    let z = zscores(x)?;
    let w = lat.row_standardized();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..z.len() {
        for j in 0..z.len() {
            num += w[i][j] * z[i] * z[j];
        }
        den += z[i] * z[i];
    }
    Ok(num / den)
}

pub fn global_bivariate_moran(lat: Lattice, x: &[f64], y: &[f64]) -> Result<f64> {
    lat.check(x)?;
    lat.check(y)?;
    let zx = zscores(x)?;
    let zy = zscores(y)?;
    let w = lat.row_standardized();
    let mut num = 0.0;
    for i in 0..zx.len() {
        for j in 0..zy.len() {
            num += w[i][j] * zx[i] * zy[j];
        }
    }
    Ok(num / zx.len() as f64)
}

/// Gi* on binary weights with the diagonal set to one, straight from the
/// displayed formula (including `S = sqrt(Σx²/n - x̄²)`).
pub fn gi_star(lat: Lattice, x: &[f64]) -> Result<Vec<f64>> {
    lat.check(x)?;
    let n = x.len();
    let nf = n as f64;
    let mut w = lat.binary();
    for (i, row) in w.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let xbar = x.iter().sum::<f64>() / nf;
    let s = (x.iter().map(|v| v * v).sum::<f64>() / nf - xbar * xbar).sqrt();
    if !(s > 0.0) {
        return Err(Error::ZeroVariance("oracle input".into()));
    }
    let mut out = Vec::with_capacity(n);
    for row in &w {
        let mut wx = 0.0;
        let mut wi = 0.0;
        for j in 0..n {
            wx += row[j] * x[j];
            wi += row[j];
        }
        let radicand = (nf * wi - wi * wi) / (nf - 1.0);
        out.push(if radicand <= 0.0 {
            0.0
        } else {
            (wx - xbar * wi) / (s * radicand.sqrt())
        });
    }
    Ok(out)
}

pub fn local_moran(lat: Lattice, x: &[f64]) -> Result<Vec<f64>> {
    bivariate_local_moran(lat, x, x)
}

pub fn bivariate_local_moran(lat: Lattice, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    lat.check(x)?;
    lat.check(y)?;
    let zx = zscores(x)?;
    let zy = zscores(y)?;
    let w = lat.row_standardized();
    Ok((0..zx.len())
        .map(|i| {
            let mut lag = 0.0;
            for j in 0..zy.len() {
                lag += w[i][j] * zy[j];
            }
            zx[i] * lag
        })
        .collect())
}

/// Twice U of `a`, counted over all pairs.
fn doubled_u_pairs(a: &[f64], b: &[f64]) -> i64 {
    let mut u2 = 0;
    for &p in a {
        for &q in b {
            if p > q {
                u2 += 2;
            } else if p == q {
                u2 += 1;
            }
        }
    }
    u2
}

/// `(U_a, two-sided exact p)` by enumerating every way to pick `n_a` of the
/// pooled observations as the first sample.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let n = a.len() + b.len();
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("both samples must be non-empty"));
    }
    if n > MAX_MANN_WHITNEY_TOTAL {
        return Err(Error::SizeLimit {
            limit: format!("exact oracle limited to {MAX_MANN_WHITNEY_TOTAL} observations"),
        });
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let nab2 = (a.len() * b.len()) as i64;
    let obs = doubled_u_pairs(a, b);
    let obs_dev = (obs - nab2).abs();
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for (k, &v) in pooled.iter().enumerate() {
            if mask & (1 << k) != 0 {
                first.push(v);
            } else {
                second.push(v);
            }
        }
        total += 1;
        if (doubled_u_pairs(&first, &second) - nab2).abs() >= obs_dev {
            hits += 1;
        }
    }
    Ok((obs as f64 / 2.0, hits as f64 / total as f64))
}

#[derive(Debug, Clone, Copy)]
pub enum OracleRequest<'a> {
    GlobalMoran { lattice: Lattice, x: &'a [f64] },
    GlobalBivariate { lattice: Lattice, x: &'a [f64], y: &'a [f64] },
    GiStar { lattice: Lattice, x: &'a [f64] },
    LocalMoran { lattice: Lattice, x: &'a [f64] },
    BivariateLocalMoran { lattice: Lattice, x: &'a [f64], y: &'a [f64] },
    MannWhitneyExact { a: &'a [f64], b: &'a [f64] },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleValue {
    Scalar(f64),
    PerCell(Vec<f64>),
    MannWhitney { u: f64, p_value: f64 },
}

pub fn oracle_stat(req: OracleRequest<'_>) -> Result<OracleValue> {
    use OracleRequest::*;
    Ok(match req {
        GlobalMoran { lattice, x } => OracleValue::Scalar(global_moran(lattice, x)?),
        GlobalBivariate { lattice, x, y } => {
            OracleValue::Scalar(global_bivariate_moran(lattice, x, y)?)
        }
        GiStar { lattice, x } => OracleValue::PerCell(gi_star(lattice, x)?),
        LocalMoran { lattice, x } => OracleValue::PerCell(local_moran(lattice, x)?),
        BivariateLocalMoran { lattice, x, y } => {
            OracleValue::PerCell(bivariate_local_moran(lattice, x, y)?)
        }
        MannWhitneyExact { a, b } => {
            let (u, p_value) = mann_whitney_exact(a, b)?;
            OracleValue::MannWhitney { u, p_value }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(r: usize, c: usize) -> Vec<f64> {
        (0..r * c)
            .map(|id| if (id / c + id % c) % 2 == 0 { 1.0 } else { -1.0 })
            .collect()
    }

    #[test]
    fn checkerboard_rook_is_minus_one() {
        let lat = Lattice::new(4, 4, Contiguity::Rook);
        let v = oracle_stat(OracleRequest::GlobalMoran { lattice: lat, x: &checkerboard(4, 4) }).unwrap();
        match v {
            OracleValue::Scalar(i) => assert!((i + 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bivariate_identity() {
        let lat = Lattice::new(3, 4, Contiguity::Queen);
        let x: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64).collect();
        assert_eq!(
            local_moran(lat, &x).unwrap(),
            bivariate_local_moran(lat, &x, &x).unwrap()
        );
    }

    #[test]
    fn mann_whitney_small() {
        assert_eq!(mann_whitney_exact(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), (0.0, 2.0 / 6.0));
        assert_eq!(mann_whitney_exact(&[5.0; 3], &[5.0; 3]).unwrap(), (4.5, 1.0));
    }

    #[test]
    fn size_limits() {
        let lat = Lattice::new(21, 20, Contiguity::Queen);
        assert!(matches!(global_moran(lat, &vec![1.0; 420]), Err(Error::SizeLimit { .. })));
        assert!(matches!(mann_whitney_exact(&[1.0; 7], &[2.0; 6]), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn gi_star_single_cell_is_degenerate() {
        let lat = Lattice::new(1, 2, Contiguity::Queen);
        assert_eq!(gi_star(lat, &[1.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }
}
