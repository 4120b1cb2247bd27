use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hotspot_core::characterize::{compare_groups, count_pois};
use hotspot_core::globalstats::{global_bivariate_moran, global_moran, standardize};
use hotspot_core::grid::{aggregate_points, BBox, EventPoint, GridSpec};
use hotspot_core::localstats::{
    bivariate_local_moran, classify_hotspots, classify_lisa, getis_ord_gstar, local_moran,
    LisaQuadrant,
};
use hotspot_core::synth::oracle::{self, Lattice};
use hotspot_core::synth::{gen_counts, Blob, Scenario};
use hotspot_core::weights::{Contiguity, WeightsMatrix};

fn unit_grid(rows: usize, cols: usize) -> GridSpec {
    GridSpec::from_parts(0.0, 0.0, 1.0, rows, cols).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale.max(f64::MIN_POSITIVE)
}

fn values(rows: &[hotspot_core::localstats::LocalStatRow]) -> Vec<f64> {
    rows.iter().map(|r| r.statistic).collect()
}

#[test]
fn thousand_random_points_are_all_counted() {
    let g = GridSpec::covering(&BBox::new(0.0, 0.0, 4000.0, 2800.0), 400.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let pts: Vec<EventPoint> = (0..1000)
        .map(|_| EventPoint::new(rng.random_range(0.0..4000.0), rng.random_range(0.0..2800.0)))
        .collect();
    let agg = aggregate_points(&pts, &g, "p");
    assert_eq!(agg.counts.total(), 1000.0);
    // independent scalar loop
    let mut expected = vec![0.0; g.n_cells()];
    for p in &pts {
        let c = (p.x / 400.0) as usize;
        let r = (p.y / 400.0) as usize;
        expected[r * g.n_cols + c] += 1.0;
    }
    assert_eq!(agg.counts.values(), &expected[..]);
}

#[test]
fn standardize_random_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 50.0).collect();
    let z = standardize(&x).unwrap();
    let mean = z.iter().sum::<f64>() / 100.0;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
    assert!(mean.abs() <= 1e-12);
    assert!((var - 1.0).abs() <= 1e-12);
}

#[test]
fn random_six_by_six_matches_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let x: Vec<f64> = (0..36).map(|_| rng.random_range(0..9) as f64).collect();
    let y: Vec<f64> = (0..36).map(|_| rng.random_range(0..9) as f64).collect();
    for rule in [Contiguity::Queen, Contiguity::Rook] {
        let g = unit_grid(6, 6);
        let w = WeightsMatrix::contiguity(&g, rule);
        let rs = w.row_standardize();
        let lat = Lattice::new(6, 6, rule);
        let gm = global_moran(&x, &rs, 9, 0).unwrap().statistic;
        assert!(rel_err(&[gm], &[oracle::global_moran(lat, &x).unwrap()]) <= 1e-12);
        let gb = global_bivariate_moran(&x, &y, &rs, 9, 0).unwrap().statistic;
        assert!(rel_err(&[gb], &[oracle::global_bivariate_moran(lat, &x, &y).unwrap()]) <= 1e-12);
        let lm = values(&local_moran(&x, &rs, 9, 0).unwrap());
        assert!(rel_err(&lm, &oracle::local_moran(lat, &x).unwrap()) <= 1e-12);
        let bl = values(&bivariate_local_moran(&x, &y, &rs, 9, 0).unwrap());
        assert!(rel_err(&bl, &oracle::bivariate_local_moran(lat, &x, &y).unwrap()) <= 1e-12);
        let gi = values(&getis_ord_gstar(&x, &w.include_self().unwrap(), 9, 0).unwrap());
        assert!(rel_err(&gi, &oracle::gi_star(lat, &x).unwrap()) <= 1e-12);
    }
}

#[test]
fn gi_star_single_spike_frozen_values() {
    let g = unit_grid(5, 5);
    let mut x = vec![0.0; 25];
    x[12] = 25.0;
    let ws = WeightsMatrix::contiguity(&g, Contiguity::Queen).include_self().unwrap();
    let engine = values(&getis_ord_gstar(&x, &ws, 9, 0).unwrap());
    let lat = Lattice::new(5, 5, Contiguity::Queen);
    let reference = oracle::gi_star(lat, &x).unwrap();
    assert!(rel_err(&engine, &reference) <= 1e-12);
    // x̄ = 1, S = √24: inner 3x3 block (W=9, Σwx=25) → 4/3; corners → -4/√84;
    // other border cells → -6/√114
    for id in 0..25 {
        let (r, c) = (id / 5, id % 5);
        let border = r == 0 || r == 4 || c == 0 || c == 4;
        let corner = (r == 0 || r == 4) && (c == 0 || c == 4);
        let frozen = if corner {
            -4.0 / 84f64.sqrt()
        } else if border {
            -6.0 / 114f64.sqrt()
        } else {
            4.0 / 3.0
        };
        assert!((engine[id] - frozen).abs() <= 1e-12, "cell {id}: {} vs {frozen}", engine[id]);
    }
}

#[test]
fn mean_local_moran_equals_global() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..80).map(|_| rng.random_range(0..12) as f64).collect();
    let rs = WeightsMatrix::contiguity(&unit_grid(8, 10), Contiguity::Queen).row_standardize();
    let local = values(&local_moran(&x, &rs, 9, 0).unwrap());
    let global = global_moran(&x, &rs, 9, 0).unwrap().statistic;
    let mean = local.iter().sum::<f64>() / local.len() as f64;
    assert!((mean - global).abs() <= 1e-9);
}

#[test]
fn poi_totals_conserved() {
    let g = GridSpec::covering(&BBox::new(0.0, 0.0, 2000.0, 2000.0), 400.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let kinds = ["bench", "school", "signals"];
    let pois: Vec<EventPoint> = (0..600)
        .map(|_| {
            EventPoint::with_kind(
                rng.random_range(-200.0..2200.0),
                rng.random_range(-200.0..2200.0),
                kinds[rng.random_range(0..3)],
            )
        })
        .collect();
    let m = count_pois(&pois, &g);
    for k in kinds {
        let direct = pois
            .iter()
            .filter(|p| p.kind.as_deref() == Some(k))
            .filter(|p| (0.0..2000.0).contains(&p.x) && (0.0..2000.0).contains(&p.y))
            .count() as u32;
        assert_eq!(m.counts(k).unwrap().iter().sum::<u32>(), direct);
    }
}

#[test]
fn poi_only_in_group_a_is_significant() {
    let g = unit_grid(4, 5);
    let mut labels = vec![LisaQuadrant::NotSignificant; 20];
    let mut pois = Vec::new();
    for id in 0..20 {
        let (r, c) = g.row_col(id);
        if id < 10 {
            labels[id] = LisaQuadrant::HH;
            pois.push(EventPoint::with_kind(c as f64 + 0.5, r as f64 + 0.5, "signals"));
        } else {
            labels[id] = LisaQuadrant::LH;
        }
    }
    let m = count_pois(&pois, &g);
    let t = compare_groups(&m, &labels, LisaQuadrant::HH, LisaQuadrant::LH, 0.05).unwrap();
    assert_eq!(t.results.len(), 1);
    assert!(t.results[0].significant);
    assert_eq!(t.results[0].u, 100.0);
    // exact enumeration over C(20,10) is beyond the exact cut-off; the
    // approximation is far below alpha either way
    assert!(t.results[0].p_value < 1e-4);
}

#[test]
fn synthetic_cell_means_match_intensity() {
    let g = unit_grid(5, 5);
    let mut s = Scenario::new(g, 2.0, 0);
    s.blobs = vec![Blob { row: 2, col: 2, radius: 1, amplitude: 10.0 }];
    let lambda = s.x_intensity();
    let reps = 500;
    let mut sums = vec![0.0; 25];
    for seed in 0..reps {
        s.seed = 9000 + seed;
        let (x, _) = gen_counts(&s).unwrap();
        for (acc, v) in sums.iter_mut().zip(x.values()) {
            *acc += v;
        }
    }
    for id in 0..25 {
        let mean = sums[id] / reps as f64;
        let se = (lambda[id] / reps as f64).sqrt();
        assert!((mean - lambda[id]).abs() <= 3.0 * se, "cell {id}: mean {mean}, λ {}", lambda[id]);
    }
}

#[test]
fn coupled_fields_are_correlated_at_scale() {
    let g = unit_grid(184, 211);
    let mut s = Scenario::new(g, 5.0, 3);
    s.coupling = 1.0;
    let (x, y) = gen_counts(&s).unwrap();
    let (x, y) = (x.values(), y.values());
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    assert!(cov / (vx * vy).sqrt() > 0.5);
}

fn agree<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).filter(|(p, q)| p == q).count() as f64 / a.len() as f64
}

fn clustered_field(seed: u64) -> Vec<f64> {
    let mut s = Scenario::new(unit_grid(30, 30), 2.0, seed);
    s.blobs = vec![
        Blob { row: 8, col: 8, radius: 2, amplitude: 4.0 },
        Blob { row: 20, col: 22, radius: 3, amplitude: 2.0 },
    ];
    gen_counts(&s).unwrap().0.values().to_vec()
}

#[test]
fn classes_stable_across_permutation_seeds() {
    let x = clustered_field(11);
    let mut y = x.clone();
    y.rotate_left(37);
    let w = WeightsMatrix::contiguity(&unit_grid(30, 30), Contiguity::Queen);
    let ws = w.include_self().unwrap();
    let rs = w.row_standardize();
    let h1 = classify_hotspots(&getis_ord_gstar(&x, &ws, 999, 1).unwrap());
    let h2 = classify_hotspots(&getis_ord_gstar(&x, &ws, 999, 2).unwrap());
    assert!(agree(&h1, &h2) >= 0.95);
    let l1 = classify_lisa(&bivariate_local_moran(&x, &y, &rs, 999, 1).unwrap(), 0.05).unwrap();
    let l2 = classify_lisa(&bivariate_local_moran(&x, &y, &rs, 999, 2).unwrap(), 0.05).unwrap();
    assert!(agree(&l1, &l2) >= 0.95);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn positive_affine_maps_leave_local_results_unchanged(
        seed in 0u64..1000,
        scale in 0.1f64..50.0,
        shift in 0.0f64..100.0,
    ) {
        let x = clustered_field(seed);
        let y: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
        let w = WeightsMatrix::contiguity(&unit_grid(30, 30), Contiguity::Queen);
        let rs = w.row_standardize();
        let a = local_moran(&x, &rs, 199, seed).unwrap();
        let b = local_moran(&y, &rs, 199, seed).unwrap();
        prop_assert!(rel_err(&values(&b), &values(&a)) <= 1e-9);
        let pa: Vec<_> = a.iter().map(|r| r.pseudo_p).collect();
        let pb: Vec<_> = b.iter().map(|r| r.pseudo_p).collect();
        prop_assert_eq!(pa, pb);
        prop_assert_eq!(classify_lisa(&a, 0.05).unwrap(), classify_lisa(&b, 0.05).unwrap());
    }

    #[test]
    fn lisa_groups_partition_non_isolates(seed in 0u64..1000, rows in 1usize..12, cols in 1usize..12) {
        let g = unit_grid(rows, cols);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0..5) as f64).collect();
        let mut y: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0..5) as f64).collect();
        x[0] += 1.0;
        y[0] += 1.0;
        if rows * cols > 1 {
            x[1] = 0.0;
            y[1] = 0.0;
        }
        let w = WeightsMatrix::contiguity(&g, Contiguity::Rook);
        prop_assume!(rows * cols > 1);
        let rows_out = bivariate_local_moran(&x, &y, &w.row_standardize(), 49, seed).unwrap();
        let labels = classify_lisa(&rows_out, 0.05).unwrap();
        let classified = labels.iter().filter(|l| **l != LisaQuadrant::NotApplicable).count();
        prop_assert_eq!(classified, rows * cols - w.isolates().len());
    }
}
