//! Decompositions and pseudo-inverses backing the learning loops.
//!
//! The training-matrix factorization goes through the small n_s x n_s Gram
//! matrix so the field dimension never enters the iteration. Dense
//! eigen/SVD kernels are nalgebra's; everything here fixes ordering and
//! signs so results are deterministic for a fixed input.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ShapeBuilder};

use crate::error::{Error, Result};
use crate::sparse_coding::SparseCodeMatrix;

pub const DEFAULT_GRAM_TOL: f64 = 1e-12;

pub fn to_nalgebra(m: &ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()).f(), |(i, j)| m[(i, j)])
}

/// Frobenius norm.
pub fn fro(m: &ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// max |Q^T Q - I|.
pub fn orthonormality_defect(q: &Array2<f64>) -> f64 {
    let g = q.t().dot(q);
    let mut dev = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((g[[i, j]] - target).abs());
        }
    }
    dev
}

/// Y = Q R with Q orthonormal (n_y x rank) and R = Q^T Y (rank x n_s).
#[derive(Debug, Clone)]
pub struct QRFactors {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
}

impl QRFactors {
    pub fn rank(&self) -> usize {
        self.q.ncols()
    }
}

/// Factorizes Y through the eigendecomposition of the small n_s x n_s Gram
/// matrix Y^T Y, keeping eigenvalues above `rel_tol` times the largest.
///
/// The raw Q = Y V Sigma^-1 loses orthogonality as the square of the
/// condition number, so two modified Gram-Schmidt passes restore it and R
/// is taken as Q^T Y. Column order is by descending eigenvalue; signs are
/// fixed so each Q column's largest-magnitude entry is positive.
pub fn gram_factorize(y: &ArrayView2<f64>, rel_tol: f64) -> Result<QRFactors> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rel_tol must lie in (0, 1), got {rel_tol}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("Y contains non-finite entries".into()));
    }
    let n_s = y.ncols();
    if n_s == 0 || y.nrows() == 0 {
        return Err(Error::DegenerateTrainingSet);
    }
    let gram = y.t().dot(y);
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(&gram.view()));
    let mut order: Vec<usize> = (0..n_s).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let lambda_max = eig.eigenvalues[order[0]];
    if !(lambda_max > 0.0) {
        return Err(Error::DegenerateTrainingSet);
    }
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&k| eig.eigenvalues[k] > rel_tol * lambda_max)
        .collect();
    let rank = kept.len();

    let mut v = Array2::zeros((n_s, rank).f());
    for (j, &k) in kept.iter().enumerate() {
        for i in 0..n_s {
            v[[i, j]] = eig.eigenvectors[(i, k)];
        }
    }
    let mut q = y.dot(&v);
    for (j, &k) in kept.iter().enumerate() {
        let sigma = eig.eigenvalues[k].sqrt();
        q.column_mut(j).mapv_inplace(|x| x / sigma);
    }

    // Two MGS passes; the columns are already nearly orthonormal.
    for _ in 0..2 {
        for j in 0..rank {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).to_owned();
                q.column_mut(j).scaled_add(-proj, &qi);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if !(norm > 0.0) {
                return Err(Error::Numerical(
                    "orthonormalization collapsed a retained direction".into(),
                ));
            }
            q.column_mut(j).mapv_inplace(|x| x / norm);
        }
    }

    for j in 0..rank {
        let col = q.column(j);
        let mut imax = 0;
        let mut vmax = 0.0f64;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > vmax {
                vmax = x.abs();
                imax = i;
            }
        }
        if q[[imax, j]] < 0.0 {
            q.column_mut(j).mapv_inplace(|x| -x);
        }
    }

    let r = q.t().dot(y);
    Ok(QRFactors { q, r })
}

/// Best rank-k factors U diag(sigma) V^T with sigma non-increasing.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub v: Array2<f64>,
}

impl TruncatedSvd {
    /// The matrix U diag(sigma) V^T.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut us = self.u.clone();
        for (j, mut col) in us.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|x| x * self.sigma[j]);
        }
        us.dot(&self.v.t())
    }
}

/// Rank-k truncated SVD with deterministic ordering and signs.
pub fn truncated_svd(m: &ArrayView2<f64>, k: usize) -> Result<TruncatedSvd> {
    let (nr, nc) = (m.nrows(), m.ncols());
    if k == 0 || k > nr.min(nc) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range for a {nr}x{nc} matrix"
        )));
    }
    let svd = to_nalgebra(m).svd(true, true);
    let u_full = svd.u.as_ref().expect("u requested");
    let vt_full = svd.v_t.as_ref().expect("v_t requested");
    let p = svd.singular_values.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut u = Array2::zeros((nr, k).f());
    let mut v = Array2::zeros((nc, k).f());
    let mut sigma = Array1::zeros(k);
    for (j, &idx) in order.iter().take(k).enumerate() {
        sigma[j] = svd.singular_values[idx];
        for i in 0..nr {
            u[[i, j]] = u_full[(i, idx)];
        }
        for i in 0..nc {
            v[[i, j]] = vt_full[(idx, i)];
        }
        // Sign convention: largest-magnitude entry of each U column positive.
        let mut imax = 0;
        let mut vmax = 0.0f64;
        for i in 0..nr {
            if u[[i, j]].abs() > vmax {
                vmax = u[[i, j]].abs();
                imax = i;
            }
        }
        if u[[imax, j]] < 0.0 {
            u.column_mut(j).mapv_inplace(|x| -x);
            v.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    Ok(TruncatedSvd { u, sigma, v })
}

/// Dominant singular triplet (u, sigma, v) via the Gram matrix of the
/// smaller side. Errors with [`Error::DegenerateDirection`] on a zero
/// matrix.
pub fn dominant_svd_pair(m: &ArrayView2<f64>) -> Result<(Array1<f64>, f64, Array1<f64>)> {
    let (nr, nc) = (m.nrows(), m.ncols());
    let scale = fro(m);
    if !(scale > 0.0) {
        return Err(Error::DegenerateDirection);
    }
    let (mut u, sigma, mut v);
    if nr <= nc {
        let gram = m.dot(&m.t());
        let eig = nalgebra::SymmetricEigen::new(to_nalgebra(&gram.view()));
        let k = argmax(eig.eigenvalues.iter().cloned());
        let lambda = eig.eigenvalues[k].max(0.0);
        sigma = lambda.sqrt();
        if !(sigma > 0.0) {
            return Err(Error::DegenerateDirection);
        }
        u = Array1::from_shape_fn(nr, |i| eig.eigenvectors[(i, k)]);
        v = m.t().dot(&u) / sigma;
    } else {
        let gram = m.t().dot(m);
        let eig = nalgebra::SymmetricEigen::new(to_nalgebra(&gram.view()));
        let k = argmax(eig.eigenvalues.iter().cloned());
        let lambda = eig.eigenvalues[k].max(0.0);
        sigma = lambda.sqrt();
        if !(sigma > 0.0) {
            return Err(Error::DegenerateDirection);
        }
        v = Array1::from_shape_fn(nc, |i| eig.eigenvectors[(i, k)]);
        u = m.dot(&v) / sigma;
    }
    let un = u.dot(&u).sqrt();
    let vn = v.dot(&v).sqrt();
    if !(un > 0.0 && vn > 0.0) {
        return Err(Error::DegenerateDirection);
    }
    u /= un;
    v /= vn;
    let k = argmax(u.iter().map(|x| x.abs()));
    if u[k] < 0.0 {
        u.mapv_inplace(|x| -x);
        v.mapv_inplace(|x| -x);
    }
    Ok((u, sigma, v))
}

fn argmax<I: IntoIterator<Item = f64>>(it: I) -> usize {
    let mut best = 0;
    let mut bestv = f64::NEG_INFINITY;
    for (i, v) in it.into_iter().enumerate() {
        if v > bestv {
            bestv = v;
            best = i;
        }
    }
    best
}

/// One alternation step towards the dominant right singular direction of E:
/// w = E x_init, x_hat = E^T w. The result is unnormalized; the caller owns
/// scaling. Signals [`Error::DegenerateDirection`] when x_init is
/// orthogonal to the row space.
pub fn fast_rank1_coeffs(e: &ArrayView2<f64>, x_init: &ArrayView1<f64>) -> Result<Array1<f64>> {
    if x_init.len() != e.ncols() {
        return Err(Error::InvalidArgument(format!(
            "x_init length {} does not match {} columns",
            x_init.len(),
            e.ncols()
        )));
    }
    let init_norm = x_init.dot(x_init).sqrt();
    if !(init_norm > 0.0) {
        return Err(Error::InvalidArgument("x_init is all zero".into()));
    }
    let w = e.dot(x_init);
    let wn = w.dot(&w).sqrt();
    if wn <= 1e-15 * fro(e) * init_norm {
        return Err(Error::DegenerateDirection);
    }
    Ok(e.t().dot(&w))
}

/// Moore-Penrose pseudo-inverse via SVD with the standard cutoff
/// max(rows, cols) * eps * sigma_max.
pub fn dense_pinv(m: &ArrayView2<f64>) -> Array2<f64> {
    let (nr, nc) = (m.nrows(), m.ncols());
    let svd = to_nalgebra(m).svd(true, true);
    let u = svd.u.as_ref().expect("u");
    let vt = svd.v_t.as_ref().expect("v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = nr.max(nc) as f64 * f64::EPSILON * smax;
    let mut pinv = Array2::zeros((nc, nr).f());
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s > cutoff {
            let inv = 1.0 / s;
            for i in 0..nc {
                for j in 0..nr {
                    pinv[[i, j]] += vt[(k, i)] * inv * u[(j, k)];
                }
            }
        }
    }
    pinv
}

/// Pseudo-inverse of a sparse code matrix X (n_d x n_s).
#[derive(Debug, Clone)]
pub struct SparsePinv {
    /// X^+ (n_s x n_d).
    pub pinv: Array2<f64>,
    /// Detected numerical rank; a value below n_d flags a rank drop and the
    /// result is the least-squares pseudo-inverse of that rank.
    pub rank: usize,
}

impl SparsePinv {
    pub fn rank_dropped(&self, n_rows: usize) -> bool {
        self.rank < n_rows
    }
}

/// Computes X^+ = X^T (X X^T)^+ exploiting the per-column supports, so the
/// cost scales with the nonzero pattern instead of the dense shape: the
/// Gram matrix X X^T accumulates support-by-support and the final product
/// streams sparse rows of X^T.
pub fn sparse_pinv(x: &SparseCodeMatrix) -> Result<SparsePinv> {
    let n_d = x.n_rows;
    let n_s = x.n_cols;
    let mut gram = Array2::<f64>::zeros((n_d, n_d).f());
    for col in &x.columns {
        for (ai, &a) in col.support.iter().enumerate() {
            let va = col.values[ai];
            for (bi, &b) in col.support.iter().enumerate() {
                gram[[a, b]] += va * col.values[bi];
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(&gram.view()));
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut pinv = Array2::zeros((n_s, n_d).f());
    if !(lambda_max > 0.0) {
        return Ok(SparsePinv { pinv, rank: 0 });
    }
    let cutoff = n_d.max(n_s) as f64 * f64::EPSILON * lambda_max;
    // H = (X X^T)^+ from the retained eigenpairs.
    let mut h = Array2::<f64>::zeros((n_d, n_d).f());
    let mut rank = 0;
    for k in 0..n_d {
        let lambda = eig.eigenvalues[k];
        if lambda > cutoff {
            rank += 1;
            let inv = 1.0 / lambda;
            for i in 0..n_d {
                let vik = eig.eigenvectors[(i, k)] * inv;
                for j in 0..n_d {
                    h[[i, j]] += vik * eig.eigenvectors[(j, k)];
                }
            }
        }
    }
    for (i, col) in x.columns.iter().enumerate() {
        for (ai, &a) in col.support.iter().enumerate() {
            let va = col.values[ai];
            for j in 0..n_d {
                pinv[[i, j]] += va * h[[a, j]];
            }
        }
    }
    Ok(SparsePinv { pinv, rank })
}
