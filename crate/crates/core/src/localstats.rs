//! Local indicators: Getis-Ord Gi*, local Moran's I and bivariate local Moran's I.
//!
//! Inference uses conditional permutation: the focal cell keeps its value and
//! its `k` neighbors receive `k` values drawn without replacement from the
//! other `n - 1` cells. Cell `i` draws from the random substream `(seed, i)`,
//! so the output is identical for any number of worker threads.
//!
//! Every statistic here is an increasing or decreasing affine function of the
//! weighted sum `T` of the values assigned to the neighbors. The pseudo p-value
//! counts draws whose `|T - E[T]|` is at least the observed distance, where
//! `E[T]` is the exact conditional mean (neighbor weight total times the mean
//! of the other `n - 1` values). The direction of a significant result is read
//! from the sign of the statistic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::globalstats::{rename_zero_variance, standardize};
use crate::perm::{as_extreme, pseudo_p, substream, PartialShuffle};
use crate::weights::{Standardization, WeightsMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalStatRow {
    pub cell_id: usize,
    /// Gi* z-value, or `I_i` for the Moran family.
    pub statistic: f64,
    /// Spatial lag of the standardized (second) variable. For Gi* this is the
    /// neighborhood mean of the standardized variable, focal cell included.
    pub lag: f64,
    pub pseudo_p: Option<f64>,
    pub isolate: bool,
    /// Gi* only: the neighborhood spans the whole dataset and the statistic is undefined.
    pub degenerate: bool,
}

impl LocalStatRow {
    pub fn is_testable(&self) -> bool {
        !self.isolate && !self.degenerate && self.pseudo_p.is_some()
    }
}

macro_rules! labelled_enum {
    ($name:ident { $($variant:ident => $code:literal, $label:literal;)* }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $code)] $variant,)*
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),*];

            pub fn code(self) -> &'static str {
                match self { $($name::$variant => $code,)* }
            }

            pub fn label(self) -> &'static str {
                match self { $($name::$variant => $label,)* }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.code())
            }
        }

        impl std::str::FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($code => Ok($name::$variant),)*
                    other => Err(Error::validation(format!(
                        concat!("unknown ", stringify!($name), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

labelled_enum!(HotspotClass {
    Hot99 => "Hot99", "Hot Spot - 99% Confidence";
    Hot95 => "Hot95", "Hot Spot - 95% Confidence";
    Hot90 => "Hot90", "Hot Spot - 90% Confidence";
    NotSignificant => "NS", "Not Significant";
    Cold90 => "Cold90", "Cold Spot - 90% Confidence";
    Cold95 => "Cold95", "Cold Spot - 95% Confidence";
    Cold99 => "Cold99", "Cold Spot - 99% Confidence";
    NotApplicable => "NA", "Not Applicable";
});

labelled_enum!(LisaQuadrant {
    HH => "HH", "HH (High Crash-High HighG)";
    HL => "HL", "HL (High Crash-Low HighG)";
    LH => "LH", "LH (Low Crash-High HighG)";
    LL => "LL", "LL (Low Crash-Low HighG)";
    NotSignificant => "NS", "Not Significant (LISA)";
    NotApplicable => "NA", "Not Applicable";
});

impl HotspotClass {
    pub fn is_hot(self) -> bool {
        matches!(self, HotspotClass::Hot99 | HotspotClass::Hot95 | HotspotClass::Hot90)
    }
}

impl LisaQuadrant {
    /// The five categories that partition every non-isolate cell.
    pub const PARTITION: [LisaQuadrant; 5] = [
        LisaQuadrant::HH,
        LisaQuadrant::HL,
        LisaQuadrant::LH,
        LisaQuadrant::LL,
        LisaQuadrant::NotSignificant,
    ];

    pub fn relationship(self) -> &'static str {
        match self {
            LisaQuadrant::HH => "High Crash & High High-G",
            LisaQuadrant::HL => "High Crash & Low High-G",
            LisaQuadrant::LH => "Low Crash & High High-G",
            LisaQuadrant::LL => "Low Crash & Low High-G",
            LisaQuadrant::NotSignificant => "Not Spatially Correlated",
            LisaQuadrant::NotApplicable => "Isolated Cell",
        }
    }
}

/// Conditional permutation of `pool` around a fixed focal cell.
struct ConditionalTest<'a> {
    pool: &'a [f64],
    total: f64,
    permutations: usize,
    seed: u64,
}

struct Scratch {
    sampler: PartialShuffle,
    draws: Vec<usize>,
}

impl<'a> ConditionalTest<'a> {
    fn new(pool: &'a [f64], permutations: usize, seed: u64) -> Self {
        Self {
            pool,
            total: pool.iter().sum(),
            permutations,
            seed,
        }
    }

    /// Pseudo p-value for cell `i` whose non-self neighbors are `(idx, w)`.
    /// `scale` is the slope of the statistic in `T`; a zero slope makes every
    /// draw tie with the observation.
    fn pseudo_p(&self, i: usize, idx: &[usize], w: &[f64], scale: f64, scratch: &mut Scratch) -> f64 {
        if scale == 0.0 {
            return 1.0;
        }
        let n = self.pool.len();
        let m = n - 1;
        let weight_total: f64 = w.iter().sum();
        let center = weight_total * (self.total - self.pool[i]) / m as f64;
        let observed: f64 = idx.iter().zip(w).map(|(&j, &wj)| wj * self.pool[j]).sum();
        let obs_dev = (observed - center).abs();

        let mut rng = substream(self.seed, i as u64);
        scratch.draws.resize(idx.len(), 0);
        let mut exceed = 0usize;
        for _ in 0..self.permutations {
            scratch.sampler.draw(&mut rng, m, &mut scratch.draws);
            let t: f64 = scratch
                .draws
                .iter()
                .zip(w)
                .map(|(&d, &wj)| {
                    // skip over the focal cell
                    let j = if d >= i { d + 1 } else { d };
                    wj * self.pool[j]
                })
                .sum();
            if as_extreme((t - center).abs(), obs_dev) {
                exceed += 1;
            }
        }
        pseudo_p(exceed, self.permutations)
    }
}

/// Row entries excluding the diagonal.
fn off_diagonal(w: &WeightsMatrix, i: usize) -> (Vec<usize>, Vec<f64>) {
    let (idx, wt) = w.row(i);
    idx.iter()
        .zip(wt)
        .filter(|(&j, _)| j != i)
        .map(|(&j, &v)| (j, v))
        .unzip()
}

fn check_len(len: usize, w: &WeightsMatrix) -> Result<()> {
    if len != w.n() {
        return Err(Error::LengthMismatch {
            expected: w.n(),
            actual: len,
        });
    }
    Ok(())
}

fn check_permutations(permutations: usize) -> Result<()> {
    if permutations < 1 {
        return Err(Error::validation("at least one permutation is required"));
    }
    Ok(())
}

fn scratch() -> Scratch {
    Scratch {
        sampler: PartialShuffle::new(),
        draws: Vec::with_capacity(16),
    }
}

/// Getis-Ord Gi* in its standardized form
/// `(Σ_j w_ij x_j - x̄ W_i) / (S sqrt((n W_i - W_i²)/(n-1)))`
/// with `S` the population standard deviation.
///
/// Requires binary weights with self-inclusion. A cell whose weight total
/// equals `n` has a zero denominator and is returned with statistic 0 and
/// the degenerate flag.
pub fn getis_ord_gstar(
    x: &[f64],
    w: &WeightsMatrix,
    permutations: usize,
    seed: u64,
) -> Result<Vec<LocalStatRow>> {
    check_len(x.len(), w)?;
    check_permutations(permutations)?;
    if w.standardization() != Standardization::Binary || !w.self_included() {
        return Err(Error::validation(
            "Gi* requires binary weights that include each cell in its own neighborhood",
        ));
    }
    let n = x.len();
    let nf = n as f64;
    let weight_totals: Vec<f64> = (0..n).map(|i| w.row_sum(i)).collect();
    let is_degenerate = |wi: f64| nf * wi - wi * wi <= 0.0;

    if weight_totals.iter().all(|&wi| is_degenerate(wi)) {
        return Ok((0..n)
            .map(|i| LocalStatRow {
                cell_id: i,
                statistic: 0.0,
                lag: 0.0,
                pseudo_p: None,
                isolate: w.is_isolate(i),
                degenerate: true,
            })
            .collect());
    }

    let z = standardize(x)?;
    let mean = x.iter().sum::<f64>() / nf;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).sqrt();
    let test = ConditionalTest::new(&z, permutations, seed);

    let rows = (0..n)
        .into_par_iter()
        .map_init(scratch, |scratch, i| {
            let wi = weight_totals[i];
            let isolate = w.is_isolate(i);
            let (idx, wt) = w.row(i);
            let lag = idx.iter().zip(wt).map(|(&j, &v)| v * z[j]).sum::<f64>() / wi;
            if is_degenerate(wi) {
                return LocalStatRow {
                    cell_id: i,
                    statistic: 0.0,
                    lag,
                    pseudo_p: None,
                    isolate,
                    degenerate: true,
                };
            }
            let weighted: f64 = idx.iter().zip(wt).map(|(&j, &v)| v * x[j]).sum();
            let denom = sd * ((nf * wi - wi * wi) / (nf - 1.0)).sqrt();
            let statistic = (weighted - mean * wi) / denom;
            let pseudo_p = (!isolate).then(|| {
                let (nidx, nw) = off_diagonal(w, i);
                test.pseudo_p(i, &nidx, &nw, 1.0, scratch)
            });
            LocalStatRow {
                cell_id: i,
                statistic,
                lag,
                pseudo_p,
                isolate,
                degenerate: false,
            }
        })
        .collect();
    Ok(rows)
}

fn require_row_standardized(w: &WeightsMatrix) -> Result<()> {
    if w.standardization() != Standardization::RowStandardized || w.self_included() {
        return Err(Error::validation(
            "Moran statistics require row-standardized weights without self-neighbors",
        ));
    }
    Ok(())
}

/// Shared body of the univariate and bivariate local Moran: `I_i = zx_i * Σ_j w_ij zy_j`.
fn local_moran_core(
    zx: &[f64],
    zy: &[f64],
    w: &WeightsMatrix,
    permutations: usize,
    seed: u64,
) -> Vec<LocalStatRow> {
    let test = ConditionalTest::new(zy, permutations, seed);
    (0..w.n())
        .into_par_iter()
        .map_init(scratch, |scratch, i| {
            let (idx, wt) = w.row(i);
            let lag: f64 = idx.iter().zip(wt).map(|(&j, &v)| v * zy[j]).sum();
            let isolate = idx.is_empty();
            let pseudo_p = (!isolate).then(|| test.pseudo_p(i, idx, wt, zx[i], scratch));
            LocalStatRow {
                cell_id: i,
                statistic: zx[i] * lag,
                lag,
                pseudo_p,
                isolate,
                degenerate: false,
            }
        })
        .collect()
}

/// Local Moran's I, `I_i = z_i Σ_j w_ij z_j`, on row-standardized weights.
pub fn local_moran(
    x: &[f64],
    w: &WeightsMatrix,
    permutations: usize,
    seed: u64,
) -> Result<Vec<LocalStatRow>> {
    check_len(x.len(), w)?;
    check_permutations(permutations)?;
    require_row_standardized(w)?;
    let z = standardize(x)?;
    Ok(local_moran_core(&z, &z, w, permutations, seed))
}

/// Bivariate local Moran's I, `I_i = z_x,i Σ_j w_ij z_y,j`. Permutations hold
/// `z_x,i` fixed and redistribute `z_y` over the other cells.
pub fn bivariate_local_moran(
    x: &[f64],
    y: &[f64],
    w: &WeightsMatrix,
    permutations: usize,
    seed: u64,
) -> Result<Vec<LocalStatRow>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    check_len(x.len(), w)?;
    check_permutations(permutations)?;
    require_row_standardized(w)?;
    let zx = standardize(x).map_err(|e| rename_zero_variance(e, "x"))?;
    let zy = standardize(y).map_err(|e| rename_zero_variance(e, "y"))?;
    Ok(local_moran_core(&zx, &zy, w, permutations, seed))
}

pub const HOTSPOT_TIERS: [f64; 3] = [0.01, 0.05, 0.10];
pub const DEFAULT_LISA_ALPHA: f64 = 0.05;

pub fn classify_hotspot(row: &LocalStatRow) -> HotspotClass {
    use HotspotClass::*;
    let Some(p) = row.pseudo_p.filter(|_| row.is_testable()) else {
        return NotApplicable;
    };
    let tier = HOTSPOT_TIERS.iter().position(|&t| p < t);
    match (row.statistic.partial_cmp(&0.0), tier) {
        (Some(std::cmp::Ordering::Greater), Some(t)) => [Hot99, Hot95, Hot90][t],
        (Some(std::cmp::Ordering::Less), Some(t)) => [Cold99, Cold95, Cold90][t],
        _ => NotSignificant,
    }
}

pub fn classify_hotspots(rows: &[LocalStatRow]) -> Vec<HotspotClass> {
    rows.iter().map(classify_hotspot).collect()
}

/// Quadrant from the sign of the focal standardized value and of the lag.
/// The focal sign is recovered as `sign(I_i) * sign(lag)`; a zero on either
/// axis is never significant.
pub fn classify_lisa_row(row: &LocalStatRow, alpha: f64) -> LisaQuadrant {
    use LisaQuadrant::*;
    let Some(p) = row.pseudo_p.filter(|_| row.is_testable()) else {
        return NotApplicable;
    };
    if p >= alpha || row.statistic == 0.0 || row.lag == 0.0 {
        return NotSignificant;
    }
    let lag_high = row.lag > 0.0;
    let focal_high = (row.statistic > 0.0) == lag_high;
    match (focal_high, lag_high) {
        (true, true) => HH,
        (true, false) => HL,
        (false, true) => LH,
        (false, false) => LL,
    }
}

pub fn classify_lisa(rows: &[LocalStatRow], alpha: f64) -> Result<Vec<LisaQuadrant>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(rows.iter().map(|r| classify_lisa_row(r, alpha)).collect())
}

/// Cell counts per category, in `ALL` order.
pub fn group_sizes<T: Copy + Eq>(labels: &[T], all: &[T]) -> Vec<(T, usize)> {
    all.iter()
        .map(|&c| (c, labels.iter().filter(|&&l| l == c).count()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::weights::{queen_weights, rook_weights};
    use rand::Rng;

    fn grid(r: usize, c: usize) -> GridSpec {
        GridSpec::from_parts(0.0, 0.0, 1.0, r, c).unwrap()
    }

    fn checkerboard(r: usize, c: usize) -> Vec<f64> {
        (0..r * c)
            .map(|id| if (id / c + id % c) % 2 == 0 { 1.0 } else { -1.0 })
            .collect()
    }

    fn row(statistic: f64, lag: f64, p: f64) -> LocalStatRow {
        LocalStatRow {
            cell_id: 0,
            statistic,
            lag,
            pseudo_p: Some(p),
            isolate: false,
            degenerate: false,
        }
    }

    #[test]
    fn hotspot_tiers() {
        assert_eq!(classify_hotspot(&row(3.1, 0.0, 0.004)), HotspotClass::Hot99);
        assert_eq!(classify_hotspot(&row(-2.0, 0.0, 0.03)), HotspotClass::Cold95);
        assert_eq!(classify_hotspot(&row(1.1, 0.0, 0.20)), HotspotClass::NotSignificant);
        assert_eq!(classify_hotspot(&row(1.7, 0.0, 0.07)), HotspotClass::Hot90);
        assert_eq!(classify_hotspot(&row(-1.7, 0.0, 0.05)), HotspotClass::Cold90);
        let mut iso = row(1.0, 0.0, 0.001);
        iso.isolate = true;
        iso.pseudo_p = None;
        assert_eq!(classify_hotspot(&iso), HotspotClass::NotApplicable);
    }

    #[test]
    fn lisa_quadrants() {
        use LisaQuadrant::*;
        // focal > 0, lag > 0
        assert_eq!(classify_lisa_row(&row(0.5, 0.5, 0.01), 0.05), HH);
        // focal > 0, lag < 0 → I < 0
        assert_eq!(classify_lisa_row(&row(-0.5, -0.5, 0.01), 0.05), HL);
        // focal < 0, lag > 0 → I < 0
        assert_eq!(classify_lisa_row(&row(-0.5, 0.5, 0.01), 0.05), LH);
        // focal < 0, lag < 0 → I > 0
        assert_eq!(classify_lisa_row(&row(0.5, -0.5, 0.01), 0.05), LL);
        assert_eq!(classify_lisa_row(&row(0.5, 0.5, 0.05), 0.05), NotSignificant);
        assert_eq!(classify_lisa_row(&row(0.0, 0.5, 0.001), 0.05), NotSignificant);
        assert_eq!(classify_lisa_row(&row(0.0, 0.0, 0.001), 0.05), NotSignificant);
        assert!(classify_lisa(&[row(1.0, 1.0, 0.5)], 1.5).is_err());
    }

    #[test]
    fn checkerboard_local_moran() {
        let w = rook_weights(&grid(4, 4)).row_standardize();
        let rows = local_moran(&checkerboard(4, 4), &w, 99, 3).unwrap();
        assert!(rows.iter().all(|r| (r.statistic + 1.0).abs() <= 1e-12));
    }

    #[test]
    fn checkerboard_bivariate_opposite() {
        let w = rook_weights(&grid(4, 4)).row_standardize();
        let x = checkerboard(4, 4);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let rows = bivariate_local_moran(&x, &y, &w, 99, 3).unwrap();
        assert!(rows.iter().all(|r| (r.statistic - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn bivariate_identity_matches_univariate() {
        let mut rng = substream(4, 4);
        let x: Vec<f64> = (0..36).map(|_| rng.random_range(0..7) as f64).collect();
        let w = queen_weights(&grid(6, 6)).row_standardize();
        let a = local_moran(&x, &w, 199, 9).unwrap();
        let b = bivariate_local_moran(&x, &x, &w, 199, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn local_mean_equals_global() {
        let mut rng = substream(8, 1);
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..3.0)).collect();
        let w = queen_weights(&grid(8, 10)).row_standardize();
        let local = local_moran(&x, &w, 1, 0).unwrap();
        let global = crate::globalstats::global_moran(&x, &w, 1, 0).unwrap();
        let mean = local.iter().map(|r| r.statistic).sum::<f64>() / 80.0;
        assert!((mean - global.statistic).abs() <= 1e-9);
    }

    #[test]
    fn gstar_degenerate_cases() {
        let g = grid(1, 1);
        let w = queen_weights(&g).include_self().unwrap();
        let rows = getis_ord_gstar(&[3.0], &w, 9, 0).unwrap();
        assert!(rows[0].degenerate && rows[0].pseudo_p.is_none());
        assert_eq!(classify_hotspots(&rows), vec![HotspotClass::NotApplicable]);

        // two cells: each neighborhood is the full dataset
        let w = queen_weights(&grid(1, 2)).include_self().unwrap();
        let rows = getis_ord_gstar(&[1.0, 2.0], &w, 9, 0).unwrap();
        assert!(rows.iter().all(|r| r.degenerate && r.statistic == 0.0));

        let w = queen_weights(&grid(3, 3)).include_self().unwrap();
        assert!(matches!(
            getis_ord_gstar(&[2.0; 9], &w, 9, 0),
            Err(Error::ZeroVariance(_))
        ));
        let plain = queen_weights(&grid(3, 3));
        assert!(getis_ord_gstar(&[1.0; 9], &plain, 9, 0).is_err());
    }

    #[test]
    fn isolates_have_no_p_value() {
        let w = queen_weights(&grid(1, 1)).row_standardize();
        // a 1x1 grid is constant by construction; use an imported matrix with an isolate instead
        assert!(local_moran(&[1.0], &w, 9, 0).is_err());
        let w = WeightsMatrix::from_rows(
            vec![vec![(1, 1.0)], vec![(0, 1.0)], vec![]],
            Standardization::RowStandardized,
            false,
        )
        .unwrap();
        let rows = local_moran(&[1.0, 2.0, 4.0], &w, 19, 0).unwrap();
        assert!(rows[2].isolate && rows[2].pseudo_p.is_none());
        let q = classify_lisa(&rows, 0.05).unwrap();
        assert_eq!(q[2], LisaQuadrant::NotApplicable);
    }

    #[test]
    fn p_values_in_range_and_minimum_reachable() {
        let g = grid(9, 9);
        let mut x = vec![0.0; 81];
        for r in 3..6 {
            for c in 3..6 {
                x[g.cell_id(r, c)] = 10.0;
            }
        }
        let w = queen_weights(&g).include_self().unwrap();
        let rows = getis_ord_gstar(&x, &w, 999, 42).unwrap();
        let center = &rows[g.cell_id(4, 4)];
        assert!(center.statistic > 3.0);
        assert_eq!(center.pseudo_p, Some(0.001));
        assert!(rows.iter().all(|r| r.pseudo_p.is_some_and(|p| p > 0.0 && p <= 1.0)));
        assert_eq!(classify_hotspot(center), HotspotClass::Hot99);
    }

    #[test]
    fn zero_focal_value_gives_p_one() {
        let w = rook_weights(&grid(3, 3)).row_standardize();
        // mean is 1, so the centre cell standardizes to exactly zero
        let x = [0.0, 2.0, 0.0, 2.0, 1.0, 2.0, 0.0, 2.0, 0.0];
        let rows = local_moran(&x, &w, 99, 0).unwrap();
        assert_eq!(rows[4].statistic, 0.0);
        assert_eq!(rows[4].pseudo_p, Some(1.0));
    }

    #[test]
    fn labels_round_trip() {
        for &q in LisaQuadrant::ALL {
            assert_eq!(q.code().parse::<LisaQuadrant>().unwrap(), q);
        }
        for &h in HotspotClass::ALL {
            assert_eq!(h.code().parse::<HotspotClass>().unwrap(), h);
        }
        assert!("XX".parse::<LisaQuadrant>().is_err());
    }
}
