//! Greedy sparse solvers: Cholesky-based OMP and batch coding.
//!
//! The solver follows the batch variant: correlations are maintained from
//! the precomputed Gram matrix D^T D and the least-squares coefficients on
//! the growing support come from a rank-one-updated Cholesky factor.
//! Per-column solves are independent, so the batch runs columns in
//! parallel and assembles results by index; the output is bit-identical
//! to a sequential column-by-column run.

use ndarray::{Array2, ArrayView1, ShapeBuilder};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;

/// One sparse coefficient column: a sorted support and matching values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumn {
    pub support: Vec<usize>,
    pub values: Vec<f64>,
    /// Set when the greedy solve stopped early on a numerical stall.
    pub stalled: bool,
}

impl SparseColumn {
    pub fn empty() -> Self {
        SparseColumn {
            support: Vec::new(),
            values: Vec::new(),
            stalled: false,
        }
    }

    pub fn nnz(&self) -> usize {
        self.support.len()
    }
}

/// Coefficient matrix X (n_d x n_s) stored column-sparse with a recorded
/// per-column cardinality bound.
#[derive(Debug, Clone)]
pub struct SparseCodeMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub columns: Vec<SparseColumn>,
    /// Cardinality bound: every column support has at most this many atoms.
    pub k_max: usize,
    /// Summed operation counts from the solves that produced the matrix.
    pub ops: u64,
}

impl SparseCodeMatrix {
    pub fn from_dense(m: &ndarray::ArrayView2<f64>, k_max: usize) -> Self {
        let columns = m
            .columns()
            .into_iter()
            .map(|col| {
                let mut support = Vec::new();
                let mut values = Vec::new();
                for (i, &v) in col.iter().enumerate() {
                    if v != 0.0 {
                        support.push(i);
                        values.push(v);
                    }
                }
                SparseColumn {
                    support,
                    values,
                    stalled: false,
                }
            })
            .collect();
        SparseCodeMatrix {
            n_rows: m.nrows(),
            n_cols: m.ncols(),
            columns,
            k_max,
            ops: 0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n_rows, self.n_cols).f());
        for (j, col) in self.columns.iter().enumerate() {
            for (i, &l) in col.support.iter().enumerate() {
                m[[l, j]] = col.values[i];
            }
        }
        m
    }

    pub fn max_support(&self) -> usize {
        self.columns.iter().map(|c| c.nnz()).max().unwrap_or(0)
    }

    pub fn is_all_zero(&self) -> bool {
        self.columns.iter().all(|c| c.support.is_empty())
    }

    /// For every row l, the columns using atom l with the stored value:
    /// usage[l] = [(column, x_l_column), ...].
    pub fn usage_lists(&self) -> Vec<Vec<(usize, f64)>> {
        let mut usage = vec![Vec::new(); self.n_rows];
        for (j, col) in self.columns.iter().enumerate() {
            for (i, &l) in col.support.iter().enumerate() {
                usage[l].push((j, col.values[i]));
            }
        }
        usage
    }

    /// B X for a dense B with n_rows-compatible columns, exploiting the
    /// sparse columns of X.
    pub fn left_mul(&self, b: &Array2<f64>) -> Array2<f64> {
        assert_eq!(b.ncols(), self.n_rows);
        let mut out = Array2::zeros((b.nrows(), self.n_cols).f());
        for (j, col) in self.columns.iter().enumerate() {
            let mut o = out.column_mut(j);
            for (i, &l) in col.support.iter().enumerate() {
                o.scaled_add(col.values[i], &b.column(l));
            }
        }
        out
    }
}

/// Result of one greedy solve. The support is sorted ascending with
/// `coeffs` matched entrywise.
#[derive(Debug, Clone)]
pub struct OmpResult {
    pub support: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub residual_norm: f64,
    pub stalled: bool,
    /// Leading-order operation count of this solve (instrumentation).
    pub ops: u64,
}

impl OmpResult {
    fn into_column(self) -> SparseColumn {
        SparseColumn {
            support: self.support,
            values: self.coeffs,
            stalled: self.stalled,
        }
    }
}

fn check_unit_columns(gram: &Array2<f64>) -> Result<()> {
    for l in 0..gram.nrows() {
        if (gram[[l, l]] - 1.0).abs() > 2e-8 {
            return Err(Error::InvalidArgument(format!(
                "dictionary column {l} has squared norm {}, expected unit",
                gram[[l, l]]
            )));
        }
    }
    Ok(())
}

/// Orthogonal matching pursuit with at most `k` atoms, stopping early when
/// the residual norm drops below `res_tol` times the signal norm.
pub fn omp(d: &Array2<f64>, s: &ArrayView1<f64>, k: usize, res_tol: f64) -> Result<OmpResult> {
    let gram = d.t().dot(d);
    omp_with_gram(d, &gram, s, k, res_tol)
}

/// OMP against a precomputed Gram matrix D^T D. `omp` computes the same
/// Gram internally, so batch and single-signal solves agree bit for bit.
pub fn omp_with_gram(
    d: &Array2<f64>,
    gram: &Array2<f64>,
    s: &ArrayView1<f64>,
    k: usize,
    res_tol: f64,
) -> Result<OmpResult> {
    let n_d = d.ncols();
    if s.len() != d.nrows() {
        return Err(Error::InvalidArgument(format!(
            "signal length {} does not match dictionary rows {}",
            s.len(),
            d.nrows()
        )));
    }
    if k == 0 || k > n_d {
        return Err(Error::InvalidArgument(format!(
            "sparsity k = {k} out of range 1..={n_d}"
        )));
    }
    check_unit_columns(gram)?;

    let n_o = d.nrows();
    let mut ops: u64 = (2 * n_o * n_d) as u64;
    let s_norm2: f64 = s.dot(s);
    let s_norm = s_norm2.sqrt();
    let mut result = OmpResult {
        support: Vec::new(),
        coeffs: Vec::new(),
        residual_norm: s_norm,
        stalled: false,
        ops,
    };
    if s_norm == 0.0 {
        return Ok(result);
    }

    let alpha0 = d.t().dot(s);
    let mut alpha = alpha0.clone();
    let target2 = (res_tol * s_norm) * (res_tol * s_norm);
    let mut err2 = s_norm2;

    // Lower-triangular Cholesky factor of the support Gram, row by row.
    let mut chol: Vec<Vec<f64>> = Vec::new();
    let mut support: Vec<usize> = Vec::new();
    let mut coeffs: Vec<f64> = Vec::new();

    for _ in 0..k {
        if err2 <= target2 {
            break;
        }
        // Most correlated atom; ties resolved to the lowest index.
        let mut best = 0usize;
        let mut best_val = -1.0f64;
        for (l, &a) in alpha.iter().enumerate() {
            let v = a.abs();
            if v > best_val {
                best_val = v;
                best = l;
            }
        }
        ops += n_d as u64;
        if best_val == 0.0 {
            break;
        }
        if support.contains(&best) {
            result.stalled = true;
            break;
        }

        // Extend the Cholesky factor with atom `best`.
        let t = support.len();
        let mut w = vec![0.0f64; t];
        for (i, &li) in support.iter().enumerate() {
            let mut v = gram[[li, best]];
            for j in 0..i {
                v -= chol[i][j] * w[j];
            }
            w[i] = v / chol[i][i];
        }
        let ww: f64 = w.iter().map(|v| v * v).sum();
        let diag2 = 1.0 - ww;
        ops += (t * t) as u64;
        if diag2 <= 1e-12 {
            result.stalled = true;
            break;
        }
        let mut row = w;
        row.push(diag2.sqrt());
        chol.push(row);
        support.push(best);

        // Coefficients on the support: solve L L^T c = alpha0_T.
        let t = support.len();
        let b: Vec<f64> = support.iter().map(|&l| alpha0[l]).collect();
        let mut y = vec![0.0f64; t];
        for i in 0..t {
            let mut v = b[i];
            for j in 0..i {
                v -= chol[i][j] * y[j];
            }
            y[i] = v / chol[i][i];
        }
        let mut c = vec![0.0f64; t];
        for i in (0..t).rev() {
            let mut v = y[i];
            for j in (i + 1)..t {
                v -= chol[j][i] * c[j];
            }
            c[i] = v / chol[i][i];
        }
        ops += (2 * t * t) as u64;

        // alpha = alpha0 - G_{:,T} c.
        alpha.assign(&alpha0);
        for (i, &l) in support.iter().enumerate() {
            for m in 0..n_d {
                alpha[m] -= gram[[m, l]] * c[i];
            }
        }
        ops += (2 * t * n_d) as u64;

        // Explicit residual: the incremental ||s||^2 - c^T alpha0_T update
        // loses half the digits once the fit is tight.
        let mut resid = s.to_owned();
        for (i, &l) in support.iter().enumerate() {
            resid.scaled_add(-c[i], &d.column(l));
        }
        ops += (2 * t * n_o + 2 * n_o) as u64;
        let new_err2 = resid.dot(&resid);
        debug_assert!(new_err2 <= err2 * (1.0 + 1e-9) + 1e-300);
        err2 = new_err2;
        coeffs = c;
    }

    // Canonical order: sorted support with matched coefficients.
    let mut pairs: Vec<(usize, f64)> = support.into_iter().zip(coeffs).collect();
    pairs.sort_by_key(|&(l, _)| l);
    result.support = pairs.iter().map(|&(l, _)| l).collect();
    result.coeffs = pairs.into_iter().map(|(_, v)| v).collect();
    result.residual_norm = err2.sqrt();
    result.ops = ops;
    Ok(result)
}

/// Least-squares coefficients restricted to a support.
#[derive(Debug, Clone)]
pub struct RestrictedLsq {
    pub coeffs: Vec<f64>,
    /// Set when the restricted columns were numerically rank deficient and
    /// the minimum-norm solution was returned instead.
    pub rank_dropped: bool,
}

/// argmin ||s - A_support c|| via normal equations on the restricted
/// columns; falls back to the minimum-norm pseudo-inverse solution on rank
/// deficiency.
pub fn restricted_lsq(
    a: &Array2<f64>,
    s: &ArrayView1<f64>,
    support: &[usize],
) -> Result<RestrictedLsq> {
    if s.len() != a.nrows() {
        return Err(Error::InvalidArgument(
            "signal length does not match matrix rows".into(),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    for &l in support {
        if l >= a.ncols() {
            return Err(Error::InvalidArgument(format!(
                "support index {l} out of range for {} columns",
                a.ncols()
            )));
        }
        if !seen.insert(l) {
            return Err(Error::InvalidArgument(format!("duplicate support index {l}")));
        }
    }
    if support.is_empty() {
        return Ok(RestrictedLsq {
            coeffs: Vec::new(),
            rank_dropped: false,
        });
    }
    let t = support.len();
    let mut at = Array2::zeros((a.nrows(), t).f());
    for (j, &l) in support.iter().enumerate() {
        at.column_mut(j).assign(&a.column(l));
    }
    let normal = at.t().dot(&at);
    let rhs = at.t().dot(s);
    let chol = nalgebra::Cholesky::new(linalg::to_nalgebra(&normal.view()));
    match chol {
        Some(ch) => {
            let b = nalgebra::DVector::from_iterator(t, rhs.iter().cloned());
            let c = ch.solve(&b);
            Ok(RestrictedLsq {
                coeffs: c.iter().cloned().collect(),
                rank_dropped: false,
            })
        }
        None => {
            let pinv = linalg::dense_pinv(&at.view());
            let c = pinv.dot(s);
            Ok(RestrictedLsq {
                coeffs: c.to_vec(),
                rank_dropped: true,
            })
        }
    }
}

/// Codes every column of S against D. Columns are solved independently
/// (in parallel) and assembled by index, so the result does not depend on
/// the processing order or the degree of concurrency. Per-column stall
/// flags propagate without aborting the batch.
pub fn batch_sparse_code(
    d: &Array2<f64>,
    s: &Array2<f64>,
    k: usize,
    res_tol: f64,
) -> Result<SparseCodeMatrix> {
    if s.nrows() != d.nrows() {
        return Err(Error::InvalidArgument(format!(
            "signals have {} rows, dictionary has {}",
            s.nrows(),
            d.nrows()
        )));
    }
    let gram = d.t().dot(d);
    check_unit_columns(&gram)?;
    let cols: Vec<OmpResult> = (0..s.ncols())
        .into_par_iter()
        .map(|j| omp_with_gram(d, &gram, &s.column(j), k, res_tol))
        .collect::<Result<Vec<_>>>()?;
    let ops = cols.iter().map(|c| c.ops).sum();
    Ok(SparseCodeMatrix {
        n_rows: d.ncols(),
        n_cols: s.ncols(),
        columns: cols.into_iter().map(|c| c.into_column()).collect(),
        k_max: k,
        ops,
    })
}
