//! Shared helpers for the integration and oracle suites.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ShapeBuilder};
use odl_core::linalg;
use odl_core::seeded;

pub fn seeded_matrix(seed: u64, nr: usize, nc: usize) -> Array2<f64> {
    Array2::from_shape_fn((nr, nc).f(), |(i, j)| {
        seeded::normal_at(seed, i as u64, j as u64)
    })
}

pub fn seeded_vector(seed: u64, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |i| seeded::normal_at(seed, i as u64, u64::MAX))
}

pub fn unit_columns(mut m: Array2<f64>) -> Array2<f64> {
    for mut col in m.columns_mut() {
        let n = col.dot(&col).sqrt();
        if n > 0.0 {
            col.mapv_inplace(|x| x / n);
        }
    }
    m
}

/// Orthonormal basis with `nc` columns from a seeded Gaussian matrix.
pub fn random_orthonormal(seed: u64, nr: usize, nc: usize) -> Array2<f64> {
    let m = seeded_matrix(seed, nr, nc);
    linalg::gram_factorize(&m.view(), 1e-12).unwrap().q
}

/// Matrix with prescribed singular values (deterministic orthobases).
pub fn matrix_with_spectrum(seed: u64, nr: usize, nc: usize, sigma: &[f64]) -> Array2<f64> {
    let k = sigma.len().min(nr).min(nc);
    let u = random_orthonormal(seed, nr, k);
    let v = random_orthonormal(seed ^ 0xabcdef, nc, k);
    let mut us = u.clone();
    for (j, mut col) in us.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|x| x * sigma[j]);
    }
    us.dot(&v.t())
}

pub fn fro_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    linalg::fro(&(a - b).view())
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
}

/// Plain left-to-right modified Gram-Schmidt; drops near-dependent
/// columns. Independent orthogonalization route used as an oracle.
pub fn mgs_basis(y: &Array2<f64>) -> Array2<f64> {
    let mut cols: Vec<Array1<f64>> = Vec::new();
    let scale = linalg::fro(&y.view());
    for col in y.columns() {
        let mut v = col.to_owned();
        for _ in 0..2 {
            for q in &cols {
                let p = q.dot(&v);
                v.scaled_add(-p, q);
            }
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-12 * scale {
            cols.push(v / n);
        }
    }
    let mut q = Array2::zeros((y.nrows(), cols.len()).f());
    for (j, col) in cols.iter().enumerate() {
        q.column_mut(j).assign(col);
    }
    q
}

/// Golden-section maximization of a unimodal scalar function on [lo, hi].
pub fn golden_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, iters: usize) -> f64 {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Mutual coherence: the largest absolute inner product between distinct
/// unit-norm columns.
pub fn mutual_coherence(d: &Array2<f64>) -> f64 {
    let g = d.t().dot(d);
    let mut mu = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j {
                mu = mu.max(g[[i, j]].abs());
            }
        }
    }
    mu
}

/// Union of the identity and the orthonormal DCT-II basis: a 2n-atom frame
/// with coherence sqrt(2/n).
pub fn identity_dct_frame(n: usize) -> Array2<f64> {
    let mut frame = Array2::zeros((n, 2 * n).f());
    for i in 0..n {
        frame[[i, i]] = 1.0;
    }
    for p in 0..n {
        let scale = if p == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            frame[[i, n + p]] =
                scale * (std::f64::consts::PI * (2 * i + 1) as f64 * p as f64 / (2 * n) as f64).cos();
        }
    }
    frame
}
