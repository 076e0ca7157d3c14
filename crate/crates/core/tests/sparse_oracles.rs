//! Recovery oracles for the greedy solver: exact recovery under measured
//! incoherence, exhaustive best-support comparison, pseudo-inverse checks.

mod common;

use common::*;
use ndarray::{Array1, Array2};
use odl_core::linalg::dense_pinv;
use odl_core::seeded;
use odl_core::sparse_coding::{batch_sparse_code, omp, restricted_lsq};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Low-coherence dictionary: a seeded column subset of the [I | DCT]
/// frame, whose coherence sqrt(2/n) is inherited by any subset.
fn incoherent_dictionary(seed: u64, n: usize, n_d: usize) -> Array2<f64> {
    let frame = identity_dct_frame(n);
    let mut idx: Vec<usize> = (0..2 * n).collect();
    idx.shuffle(&mut seeded::rng_at(seed, 0, 0));
    let mut d = Array2::zeros((n, n_d));
    for (j, &l) in idx.iter().take(n_d).enumerate() {
        d.column_mut(j).assign(&frame.column(l));
    }
    d
}

fn planted_signal(seed: u64, d: &Array2<f64>, k: usize) -> (Vec<usize>, Array1<f64>) {
    let mut rng = seeded::rng_at(seed, 1, 0);
    let mut idx: Vec<usize> = (0..d.ncols()).collect();
    idx.shuffle(&mut rng);
    let mut support: Vec<usize> = idx.into_iter().take(k).collect();
    support.sort_unstable();
    let mut s = Array1::zeros(d.nrows());
    for &l in &support {
        let mag: f64 = rng.random_range(1.0..2.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        s.scaled_add(sign * mag, &d.column(l));
    }
    (support, s)
}

#[test]
fn omp_exact_recovery_under_measured_incoherence() {
    for k in 1..=3usize {
        for seed in 0..12u64 {
            let d = incoherent_dictionary(40 * k as u64 + seed, 64, 24);
            let mu = mutual_coherence(&d);
            assert!(
                mu < 1.0 / (2.0 * k as f64 - 1.0),
                "construction must stay incoherent: mu = {mu}"
            );
            let (support, s) = planted_signal(77 * k as u64 + seed, &d, k);
            let r = omp(&d, &s.view(), k, 1e-12).unwrap();
            assert_eq!(r.support, support, "k {k} seed {seed}");
            assert!(r.residual_norm <= 1e-10 * s.dot(&s).sqrt());
        }
    }
}

/// Exhaustive search over all supports of size k, re-fit by least squares.
fn best_support_residual(d: &Array2<f64>, s: &Array1<f64>, k: usize) -> f64 {
    let n_d = d.ncols();
    let mut best = f64::INFINITY;
    let mut support = vec![0usize; k];
    fn rec(
        d: &Array2<f64>,
        s: &Array1<f64>,
        k: usize,
        start: usize,
        support: &mut Vec<usize>,
        depth: usize,
        best: &mut f64,
    ) {
        if depth == k {
            if let Ok(fit) = restricted_lsq(d, &s.view(), &support[..]) {
                let mut resid = s.clone();
                for (j, &l) in support.iter().enumerate() {
                    resid.scaled_add(-fit.coeffs[j], &d.column(l));
                }
                let norm = resid.dot(&resid).sqrt();
                if norm < *best {
                    *best = norm;
                }
            }
            return;
        }
        for l in start..d.ncols() {
            support[depth] = l;
            rec(d, s, k, l + 1, support, depth + 1, best);
        }
    }
    rec(d, s, k, 0, &mut support.clone(), 0, &mut best);
    let _ = n_d;
    best
}

#[test]
fn omp_close_to_exhaustive_oracle_on_coherent_cases() {
    let k = 2;
    let mut checked = 0;
    for seed in 0..15u64 {
        let d = unit_columns(seeded_matrix(2000 + seed, 16, 24));
        let (_, clean) = planted_signal(2100 + seed, &d, k);
        let noise = seeded_vector(2200 + seed, 16);
        let s = &clean + &(noise.clone() * (0.1 * clean.dot(&clean).sqrt() / noise.dot(&noise).sqrt()));
        let r = omp(&d, &s.view(), k, 1e-12).unwrap();
        let oracle = best_support_residual(&d, &s, k);
        assert!(
            r.residual_norm <= 1.10 * oracle + 1e-12,
            "seed {seed}: omp {} vs oracle {}",
            r.residual_norm,
            oracle
        );
        checked += 1;
    }
    assert!(checked >= 15);
}

#[test]
fn restricted_lsq_matches_pinv_oracle() {
    for seed in 0..20u64 {
        let a = seeded_matrix(2300 + seed, 10, 6);
        let s = seeded_vector(2400 + seed, 10);
        let support = [1usize, 3, 5];
        let fit = restricted_lsq(&a, &s.view(), &support).unwrap();
        assert!(!fit.rank_dropped);

        let mut at = Array2::zeros((10, 3));
        for (j, &l) in support.iter().enumerate() {
            at.column_mut(j).assign(&a.column(l));
        }
        let oracle = dense_pinv(&at.view()).dot(&s);
        for (x, y) in fit.coeffs.iter().zip(oracle.iter()) {
            assert!((x - y).abs() <= 1e-10, "seed {seed}");
        }
        // Residual orthogonal to the span of the restricted columns.
        let mut resid = s.clone();
        for (j, &l) in support.iter().enumerate() {
            resid.scaled_add(-fit.coeffs[j], &a.column(l));
        }
        for &l in &support {
            assert!(a.column(l).dot(&resid).abs() <= 1e-10 * s.dot(&s).sqrt());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn omp_support_bounded_and_matches_batch(seed in 0u64..5000, k in 1usize..5) {
        let d = unit_columns(seeded_matrix(seed, 8, 14));
        let s = Array2::from_shape_fn((8, 4), |(i, j)| {
            seeded::normal_at(seed ^ 0x55aa, i as u64, j as u64)
        });
        let batch = batch_sparse_code(&d, &s, k, 1e-12).unwrap();
        for j in 0..4 {
            let single = omp(&d, &s.column(j), k, 1e-12).unwrap();
            prop_assert!(single.support.len() <= k);
            prop_assert_eq!(&batch.columns[j].support, &single.support);
            for (a, b) in batch.columns[j].values.iter().zip(single.coeffs.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
