//! POI count features and Mann-Whitney U comparisons between LISA groups.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::{EventPoint, GridSpec};
use crate::localstats::LisaQuadrant;

/// Per-type POI counts over the grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiFeatureMatrix {
    n_cells: usize,
    types: Vec<String>,
    /// `counts[t][cell]`
    counts: Vec<Vec<u32>>,
    dropped: usize,
}

impl PoiFeatureMatrix {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Every observed type, sorted.
    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn counts(&self, poi_type: &str) -> Option<&[u32]> {
        let t = self.types.iter().position(|s| s == poi_type)?;
        Some(&self.counts[t])
    }

    pub fn count(&self, cell_id: usize, poi_type: &str) -> u32 {
        self.counts(poi_type).map_or(0, |c| c[cell_id])
    }

    /// POIs outside the grid or without a kind tag.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    fn columns(&self) -> impl Iterator<Item = (&String, &Vec<u32>)> {
        self.types.iter().zip(&self.counts)
    }
}

/// Counts POIs per `kind` with the grid's half-open membership rule. Kinds are
/// taken verbatim. Untagged points are dropped.
pub fn count_pois(pois: &[EventPoint], g: &GridSpec) -> PoiFeatureMatrix {
    let n = g.n_cells();
    let mut by_type: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    let mut dropped = 0;
    for p in pois {
        let Some(kind) = p.kind.as_deref() else {
            dropped += 1;
            continue;
        };
        let col = by_type.entry(kind).or_insert_with(|| vec![0; n]);
        match g.locate(p.x, p.y) {
            Some(id) => col[id] += 1,
            None => dropped += 1,
        }
    }
    let (types, counts) = by_type
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .unzip();
    PoiFeatureMatrix {
        n_cells: n,
        types,
        counts,
        dropped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MwMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U of the first sample.
    pub u: f64,
    /// U of the second sample; `u + u_other = n_a * n_b`.
    pub u_other: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: MwMethod,
}

/// Samples up to this combined size use exact enumeration.
pub const EXACT_MAX_TOTAL: usize = 12;

/// Enumeration is refused beyond this size.
const EXACT_HARD_LIMIT: usize = 26;

struct Ranked {
    /// Twice the midrank of every pooled observation, first sample first.
    doubled: Vec<i64>,
    /// `Σ (t³ - t)` over tie blocks.
    tie_term: f64,
}

fn midranks(a: &[f64], b: &[f64]) -> Result<Ranked> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if pooled.iter().any(|v| v.is_nan()) {
        return Err(Error::validation("Mann-Whitney samples must not contain NaN"));
    }
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut doubled = vec![0i64; pooled.len()];
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // ranks start+1..=end, average doubled = start + 1 + end
        let r2 = (start + 1 + end) as i64;
        for &k in &order[start..end] {
            doubled[k] = r2;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    Ok(Ranked { doubled, tie_term })
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation(format!(
            "Mann-Whitney needs two non-empty samples (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Twice `U_a`, which is always an integer.
fn doubled_u(ranked: &Ranked, n_a: usize) -> i64 {
    let r2: i64 = ranked.doubled[..n_a].iter().sum();
    r2 - (n_a * (n_a + 1)) as i64
}

/// Exact two-sided p-value: the share of all `C(n, n_a)` relabelings whose
/// `|U - n_a n_b / 2|` is at least the observed one. Ties keep their midranks.
pub fn mann_whitney_exact_p(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let n = a.len() + b.len();
    if n > EXACT_HARD_LIMIT {
        return Err(Error::SizeLimit {
            limit: format!("exact Mann-Whitney enumeration limited to {EXACT_HARD_LIMIT} observations"),
        });
    }
    let ranked = midranks(a, b)?;
    let n_a = a.len();
    let mid2 = (n_a * b.len()) as i64;
    let obs = (doubled_u(&ranked, n_a) - mid2).abs();
    let offset = (n_a * (n_a + 1)) as i64;

    fn walk(ranks: &[i64], start: usize, left: usize, sum: i64, visit: &mut dyn FnMut(i64)) {
        if left == 0 {
            visit(sum);
            return;
        }
        for k in start..=ranks.len() - left {
            walk(ranks, k + 1, left - 1, sum + ranks[k], visit);
        }
    }

    let (mut hits, mut total) = (0u64, 0u64);
    walk(&ranked.doubled, 0, n_a, 0, &mut |r2| {
        total += 1;
        if (r2 - offset - mid2).abs() >= obs {
            hits += 1;
        }
    });
    Ok(hits as f64 / total as f64)
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_normal_p(a: &[f64], b: &[f64]) -> Result<f64> {
    check_samples(a, b)?;
    let ranked = midranks(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let u = doubled_u(&ranked, a.len()) as f64 / 2.0;
    let mean = na * nb / 2.0;
    let var = na * nb / 12.0 * ((n + 1.0) - ranked.tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

/// Two-sided Mann-Whitney U test with midranks for ties. Exact enumeration
/// when `n_a + n_b <= 12`, normal approximation otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    check_samples(a, b)?;
    let ranked = midranks(a, b)?;
    let u = doubled_u(&ranked, a.len()) as f64 / 2.0;
    let u_other = (a.len() * b.len()) as f64 - u;
    let (p_value, method) = if a.len() + b.len() <= EXACT_MAX_TOTAL {
        (mann_whitney_exact_p(a, b)?, MwMethod::Exact)
    } else {
        (mann_whitney_normal_p(a, b)?, MwMethod::Normal)
    };
    Ok(MannWhitney {
        u,
        u_other,
        p_value,
        method,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MWResult {
    pub poi_type: String,
    /// U of group A.
    pub u: f64,
    pub p_value: f64,
    pub mean_group_a: f64,
    pub mean_group_b: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MwTable {
    pub group_a: LisaQuadrant,
    pub group_b: LisaQuadrant,
    pub n_a: usize,
    pub n_b: usize,
    pub alpha: f64,
    /// Sorted by `(p_value, poi_type)`.
    pub results: Vec<MWResult>,
}

impl MwTable {
    /// Number of tests performed, for users applying their own multiplicity correction.
    pub fn n_tests(&self) -> usize {
        self.results.len()
    }
}

/// One Mann-Whitney test per POI type between the cells of two quadrants.
pub fn compare_groups(
    features: &PoiFeatureMatrix,
    quadrants: &[LisaQuadrant],
    group_a: LisaQuadrant,
    group_b: LisaQuadrant,
    alpha: f64,
) -> Result<MwTable> {
    if quadrants.len() != features.n_cells() {
        return Err(Error::LengthMismatch {
            expected: features.n_cells(),
            actual: quadrants.len(),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let members = |q: LisaQuadrant| -> Result<Vec<usize>> {
        let cells: Vec<usize> = (0..quadrants.len()).filter(|&i| quadrants[i] == q).collect();
        if cells.is_empty() {
            return Err(Error::EmptyGroup(q.code().to_string()));
        }
        Ok(cells)
    };
    let cells_a = members(group_a)?;
    let cells_b = members(group_b)?;

    let mut results: Vec<MWResult> = features
        .columns()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(poi_type, col)| {
            let a: Vec<f64> = cells_a.iter().map(|&i| col[i] as f64).collect();
            let b: Vec<f64> = cells_b.iter().map(|&i| col[i] as f64).collect();
            let mw = mann_whitney_u(&a, &b)?;
            Ok(MWResult {
                poi_type: poi_type.clone(),
                u: mw.u,
                p_value: mw.p_value,
                mean_group_a: a.iter().sum::<f64>() / a.len() as f64,
                mean_group_b: b.iter().sum::<f64>() / b.len() as f64,
                significant: mw.p_value < alpha,
            })
        })
        .collect::<Result<_>>()?;
    results.sort_by(|x, y| {
        x.p_value
            .total_cmp(&y.p_value)
            .then_with(|| x.poi_type.cmp(&y.poi_type))
    });
    Ok(MwTable {
        group_a,
        group_b,
        n_a: cells_a.len(),
        n_b: cells_b.len(),
        alpha,
        results,
    })
}
