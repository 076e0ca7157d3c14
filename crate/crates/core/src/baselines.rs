//! PCA/POD and K-SVD estimators used as comparison baselines.
//!
//! Both learn their dictionary from the field snapshots alone; the sensor
//! operator only enters at estimation time. PCA recovers coefficients with
//! the pseudo-inverse lift-up (minimum-norm when underdetermined), K-SVD
//! codes the observed dictionary greedily with OMP.

use ndarray::{Array1, Array2, ShapeBuilder};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg;
use crate::matio::TrainingSet;
use crate::observation::ObservationOperator;
use crate::seeded;
use crate::sparse_coding::{batch_sparse_code, omp, SparseCodeMatrix};

#[derive(Debug, Clone)]
pub struct PcaModel {
    /// Orthonormal modes, n_y x n_d.
    pub modes: Array2<f64>,
    pub mean_field: Array1<f64>,
}

/// Dominant principal components of the centered training snapshots,
/// computed from the n_s-dimensional eigenproblem of Y^T Y.
pub fn pca_learn(ts: &TrainingSet, n_d: usize) -> Result<PcaModel> {
    let qr = linalg::gram_factorize(&ts.y.view(), linalg::DEFAULT_GRAM_TOL)?;
    if n_d == 0 || n_d > qr.rank() {
        return Err(Error::Numerical(format!(
            "requested {n_d} modes but the numerical rank is {}",
            qr.rank()
        )));
    }
    let modes = qr.q.slice(ndarray::s![.., 0..n_d]).to_owned();
    Ok(PcaModel {
        modes,
        mean_field: ts.mean_field.clone(),
    })
}

/// Lift-up estimate: x = (C Phi)^+ (s - C mean), returned as mean + Phi x.
/// The pseudo-inverse picks the minimum-norm coefficients when the system
/// is underdetermined (more atoms than sensors).
pub fn pca_estimate(
    model: &PcaModel,
    c: &ObservationOperator,
    s: &Array1<f64>,
) -> Result<Array1<f64>> {
    if s.len() != c.n_obs {
        return Err(Error::InvalidArgument(format!(
            "measurement has length {}, operator yields {}",
            s.len(),
            c.n_obs
        )));
    }
    let g = c.observe(&model.modes)?;
    if g.iter().all(|&v| v == 0.0) {
        return Err(Error::NotObservable);
    }
    let s_mean = c.apply(&model.mean_field.view())?;
    let s_c = s - &s_mean;
    let x = linalg::dense_pinv(&g.view()).dot(&s_c);
    Ok(&model.mean_field + &model.modes.dot(&x))
}

#[derive(Debug, Clone)]
pub struct KsvdModel {
    /// Unit-norm atoms, n_y x n_d.
    pub dictionary: Array2<f64>,
    pub k: usize,
    pub mean_field: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct KsvdOutcome {
    pub model: KsvdModel,
    /// Training error ||Y - Phi X||_F measured after each sparse-coding
    /// pass; entry 0 is the error of the initialization.
    pub error_history: Vec<f64>,
    pub best_error: f64,
}

/// Relative training-error change below which the alternation stops early.
pub const KSVD_EARLY_STOP: f64 = 1e-5;

/// Alternating sparse-coding / per-atom codebook update, initialized with
/// the normalized PCA modes. The returned dictionary is the best iterate by
/// training error, each iterate being measured with a fresh sparse-coding
/// pass, so the best error is non-increasing in the iteration budget.
pub fn ksvd_learn(
    ts: &TrainingSet,
    n_d: usize,
    k: usize,
    iterations: usize,
    seed: u64,
) -> Result<KsvdOutcome> {
    let n_s = ts.n_snapshots();
    if !(k >= 1 && k <= n_d && n_d <= n_s) {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= K <= n_d <= n_s, got K = {k}, n_d = {n_d}, n_s = {n_s}"
        )));
    }
    let init = pca_learn(ts, n_d)?;
    let mut phi = init.modes;
    let y = &ts.y;

    let mut code = batch_sparse_code(&phi, y, k, 1e-12)?;
    let mut err = training_error(y, &phi, &code);
    let mut best = (phi.clone(), err);
    let mut history = vec![err];

    for iter in 0..iterations {
        codebook_update(&mut phi, &mut code, y, seed, iter as u64)?;
        code = batch_sparse_code(&phi, y, k, 1e-12)?;
        err = training_error(y, &phi, &code);
        history.push(err);
        if err < best.1 {
            best = (phi.clone(), err);
        }
        let prev = history[history.len() - 2];
        if prev > 0.0 && (prev - err).abs() <= KSVD_EARLY_STOP * prev {
            break;
        }
    }

    Ok(KsvdOutcome {
        model: KsvdModel {
            dictionary: best.0,
            k,
            mean_field: ts.mean_field.clone(),
        },
        best_error: best.1,
        error_history: history,
    })
}

fn training_error(y: &Array2<f64>, phi: &Array2<f64>, x: &SparseCodeMatrix) -> f64 {
    let recon = x.left_mul(phi);
    linalg::fro(&(y - &recon).view())
}

/// One codebook-update sweep: every atom is revised once, in a seeded
/// random order, to the dominant left singular direction of the residual
/// restricted to the snapshots using it; the matching coefficient row is
/// refreshed in place. Unused atoms are re-anchored to the worst-served
/// snapshot residual.
fn codebook_update(
    phi: &mut Array2<f64>,
    x: &mut SparseCodeMatrix,
    y: &Array2<f64>,
    seed: u64,
    iteration: u64,
) -> Result<()> {
    let n_d = phi.ncols();
    let mut order: Vec<usize> = (0..n_d).collect();
    let mut rng = seeded::rng_at(seed, iteration, 0);
    order.shuffle(&mut rng);

    for l in order {
        // (column, position of l in that column's support)
        let mut users: Vec<(usize, usize)> = Vec::new();
        for (j, col) in x.columns.iter().enumerate() {
            if let Ok(pos) = col.support.binary_search(&l) {
                users.push((j, pos));
            }
        }
        if users.is_empty() {
            replace_dead_atom(phi, x, y, l);
            continue;
        }
        let m = users.len();
        let mut e = Array2::zeros((y.nrows(), m).f());
        for (idx, &(j, _)) in users.iter().enumerate() {
            let mut col = y.column(j).to_owned();
            let xcol = &x.columns[j];
            for (p, &atom) in xcol.support.iter().enumerate() {
                if atom == l {
                    continue;
                }
                col.scaled_add(-xcol.values[p], &phi.column(atom));
            }
            e.column_mut(idx).assign(&col);
        }
        match linalg::dominant_svd_pair(&e.view()) {
            Ok((u, sigma, v)) => {
                phi.column_mut(l).assign(&u);
                for (idx, &(j, pos)) in users.iter().enumerate() {
                    x.columns[j].values[pos] = sigma * v[idx];
                }
            }
            Err(Error::DegenerateDirection) => replace_dead_atom(phi, x, y, l),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn replace_dead_atom(phi: &mut Array2<f64>, x: &SparseCodeMatrix, y: &Array2<f64>, l: usize) {
    let recon = x.left_mul(phi);
    let resid = y - &recon;
    let mut best = 0;
    let mut best_norm = 0.0f64;
    for (j, col) in resid.columns().into_iter().enumerate() {
        let n = col.dot(&col).sqrt();
        if n > best_norm {
            best_norm = n;
            best = j;
        }
    }
    if best_norm > 0.0 {
        let col = resid.column(best).mapv(|v| v / best_norm);
        phi.column_mut(l).assign(&col);
    }
}

#[derive(Debug, Clone)]
pub struct KsvdEstimate {
    pub field: Array1<f64>,
    /// Atoms whose observed signature was numerically zero; they were
    /// excluded from selection.
    pub excluded_atoms: Vec<usize>,
}

/// Codes the measurement against the column-normalized observed dictionary
/// C Phi with OMP, folds the normalization back and lifts to field space.
pub fn ksvd_estimate(
    model: &KsvdModel,
    c: &ObservationOperator,
    s: &Array1<f64>,
    k: usize,
) -> Result<KsvdEstimate> {
    if k == 0 || k > c.n_obs {
        return Err(Error::InvalidArgument(format!(
            "sparsity K = {k} must lie in 1..={}",
            c.n_obs
        )));
    }
    let g = c.observe(&model.dictionary)?;
    let n_d = g.ncols();
    let mut scales = Vec::with_capacity(n_d);
    let mut max_scale = 0.0f64;
    for col in g.columns() {
        let n = col.dot(&col).sqrt();
        scales.push(n);
        max_scale = max_scale.max(n);
    }
    if max_scale == 0.0 {
        return Err(Error::NotObservable);
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut excluded: Vec<usize> = Vec::new();
    for (l, &n) in scales.iter().enumerate() {
        if n > 1e-12 * max_scale {
            kept.push(l);
        } else {
            excluded.push(l);
        }
    }
    let mut gn = Array2::zeros((g.nrows(), kept.len()).f());
    for (j, &l) in kept.iter().enumerate() {
        let col = g.column(l).mapv(|v| v / scales[l]);
        gn.column_mut(j).assign(&col);
    }

    let s_mean = c.apply(&model.mean_field.view())?;
    let s_c = s - &s_mean;
    let k_eff = k.min(kept.len());
    let r = omp(&gn, &s_c.view(), k_eff, 1e-12)?;

    let mut field = model.mean_field.clone();
    for (j, &val) in r.support.iter().zip(r.coeffs.iter()) {
        let l = kept[*j];
        field.scaled_add(val / scales[l], &model.dictionary.column(l));
    }
    Ok(KsvdEstimate {
        field,
        excluded_atoms: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ts_from_centered(y: Array2<f64>) -> TrainingSet {
        let n_y = y.nrows();
        let n_o = 1;
        TrainingSet::from_centered(
            y,
            Array2::zeros((n_o, 0)),
            Array1::zeros(n_y),
            Array1::zeros(n_o),
        )
        .ok()
        .unwrap()
    }

    fn ts_with_obs(y: Array2<f64>, c: &ObservationOperator) -> TrainingSet {
        let s = c.observe(&y).unwrap();
        let n_y = y.nrows();
        TrainingSet::from_centered(y, s, Array1::zeros(n_y), Array1::zeros(c.n_obs)).unwrap()
    }

    #[test]
    fn pca_orders_orthogonal_columns_by_norm() {
        let mut y = Array2::zeros((4, 3));
        y[[0, 0]] = 3.0;
        y[[1, 1]] = 2.0;
        y[[2, 2]] = 1.0;
        let c = ObservationOperator::identity(4);
        let ts = ts_with_obs(y, &c);
        let model = pca_learn(&ts, 2).unwrap();
        assert!((model.modes[[0, 0]].abs() - 1.0).abs() < 1e-12);
        assert!((model.modes[[1, 1]].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_full_rank_projection_is_exact() {
        let y = Array2::from_shape_fn((12, 5).f(), |(i, j)| {
            seeded::normal_at(8, i as u64, j as u64)
        });
        let c = ObservationOperator::identity(12);
        let ts = ts_with_obs(y.clone(), &c);
        let model = pca_learn(&ts, 5).unwrap();
        let proj = model.modes.dot(&model.modes.t().dot(&y));
        let err = linalg::fro(&(&y - &proj).view());
        assert!(err <= 1e-9 * linalg::fro(&y.view()));
    }

    #[test]
    fn pca_rejects_excess_rank() {
        let mut y = Array2::zeros((6, 4));
        y[[0, 0]] = 1.0;
        y[[1, 1]] = 1.0;
        let c = ObservationOperator::identity(6);
        let ts = ts_with_obs(y, &c);
        let err = pca_learn(&ts, 4).unwrap_err();
        assert!(err.to_string().contains("rank is 2"));
    }

    #[test]
    fn pca_estimate_identity_restriction() {
        let y = Array2::from_shape_fn((6, 6).f(), |(i, j)| {
            seeded::normal_at(14, i as u64, j as u64)
        });
        let c = ObservationOperator::identity(6);
        let ts = ts_with_obs(y, &c);
        let model = pca_learn(&ts, 4).unwrap();
        let x0 = array![1.0, -2.0, 0.5, 0.25];
        let truth = model.modes.dot(&x0);
        let s = c.apply(&truth.view()).unwrap();
        let est = pca_estimate(&model, &c, &s).unwrap();
        assert!(linalg::fro(&(&est - &truth).insert_axis(ndarray::Axis(1)).view()) < 1e-9);
    }

    #[test]
    fn pca_estimate_detects_unobservable() {
        let mut y = Array2::zeros((4, 2));
        y[[0, 0]] = 1.0;
        y[[0, 1]] = -1.0;
        y[[1, 0]] = 0.5;
        y[[1, 1]] = 0.5;
        let c_all = ObservationOperator::identity(4);
        let ts = ts_with_obs(y, &c_all);
        let model = pca_learn(&ts, 1).unwrap();
        // Sensors sit where the modes vanish.
        let c = ObservationOperator::point_restriction(&[2, 3], 4).unwrap();
        let s = array![0.0, 0.0];
        assert!(matches!(
            pca_estimate(&model, &c, &s),
            Err(Error::NotObservable)
        ));
    }

    #[test]
    fn ksvd_zero_iterations_returns_pca_init() {
        let y = Array2::from_shape_fn((10, 8).f(), |(i, j)| {
            seeded::normal_at(2, i as u64, j as u64)
        });
        let c = ObservationOperator::identity(10);
        let ts = ts_with_obs(y, &c);
        let pca = pca_learn(&ts, 4).unwrap();
        let out = ksvd_learn(&ts, 4, 2, 0, 1).unwrap();
        assert_eq!(out.model.dictionary, pca.modes);
        assert_eq!(out.error_history.len(), 1);
    }

    #[test]
    fn ksvd_estimate_exact_on_identity_observation() {
        let y = Array2::from_shape_fn((8, 8).f(), |(i, j)| {
            seeded::normal_at(6, i as u64, j as u64)
        });
        let c = ObservationOperator::identity(8);
        let ts = ts_with_obs(y, &c);
        let out = ksvd_learn(&ts, 4, 2, 3, 7).unwrap();
        let phi = &out.model.dictionary;
        let x0 = array![0.0, 2.0, 0.0, -1.0];
        let truth = phi.dot(&x0);
        let s = c.apply(&truth.view()).unwrap();
        let est = ksvd_estimate(&out.model, &c, &s, 4).unwrap();
        for (a, b) in est.field.iter().zip(truth.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    use crate::seeded;
}
