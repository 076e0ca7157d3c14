//! GOBAL: goal-oriented basis learning.
//!
//! Trains a pair of dictionaries from (field, measurement) snapshot pairs:
//! a unit-norm predictor D in measurement space, in which observations
//! admit a sparse code, and a reduced QoI dictionary RB such that the field
//! reconstruction Q RB x tracks the same code x. The loop alternates three
//! steps per iteration:
//!
//! 1. features codebook update: revise randomly drawn predictor atoms from
//!    the field-space residual, using a one-step rank-1 coefficient
//!    estimate,
//! 2. sparse coding of the measurements against D (OMP or SBL),
//! 3. estimation codebook update: RB = R X^+ through the sparsity-aware
//!    pseudo-inverse.
//!
//! Everything runs in the reduced coordinates (R, RB) of the Gram
//! factorization Y = Q R, so the field dimension never enters the
//! iteration; errors there equal field-space errors exactly because Q is
//! orthonormal. The best iterate by coding error is tracked and returned.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{self, QRFactors};
use crate::matio::{Meta, Method, ModelBundle, TrainingSet};
use crate::observation::ObservationOperator;
use crate::sbl::{self, SblHyper, SblOptions};
use crate::seeded;
use crate::sparse_coding::{batch_sparse_code, omp, SparseCodeMatrix, SparseColumn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScMode {
    Omp,
    Sbl,
}

impl ScMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScMode::Omp => "omp",
            ScMode::Sbl => "sbl",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GobalOptions {
    pub n_d: usize,
    /// Atoms revised per features codebook update; defaults to n_d.
    pub n_up: Option<usize>,
    pub r_max: usize,
    pub sc_mode: ScMode,
    /// Sparsity bound of the coding step; defaults to the sensor count.
    pub k: Option<usize>,
    /// Stop when the coding error varies by less than this relative amount
    /// over `conv_window` consecutive iterations.
    pub conv_rel_tol: f64,
    pub conv_window: usize,
    pub seed: u64,
    pub res_tol: f64,
    /// Noise precision for the SBL coding step; derived from the
    /// measurement energy when absent.
    pub sbl_beta: Option<f64>,
    /// Keep beta fixed during training codes (it is re-estimated from the
    /// evidence at estimation time).
    pub sbl_beta_fixed: bool,
}

impl GobalOptions {
    pub fn new(n_d: usize, seed: u64) -> Self {
        GobalOptions {
            n_d,
            n_up: None,
            r_max: 100,
            sc_mode: ScMode::Omp,
            k: None,
            conv_rel_tol: 1e-4,
            conv_window: 10,
            seed,
            res_tol: 1e-12,
            sbl_beta: None,
            sbl_beta_fixed: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BestIterate {
    pub d: Array2<f64>,
    pub rb: Array2<f64>,
    pub err: f64,
}

#[derive(Debug, Clone)]
pub struct GobalState {
    /// Predictor dictionary, n_o x n_d, unit-norm columns.
    pub d: Array2<f64>,
    /// Reduced QoI dictionary, rank x n_d.
    pub rb: Array2<f64>,
    /// Current sparse code, n_d x n_s.
    pub x: SparseCodeMatrix,
    /// Coding error ||R - RB X||_F of the current iterate.
    pub err: f64,
    pub best: BestIterate,
}

fn coding_error(r: &Array2<f64>, rb: &Array2<f64>, x: &SparseCodeMatrix) -> f64 {
    let recon = x.left_mul(rb);
    linalg::fro(&(r - &recon).view())
}

/// Factorizes the training fields and seeds (D, RB, X) from the
/// n_d-truncated SVD of R: RB takes the scaled left factors, X the right
/// factors, and D = C Q RB with columns normalized to unit length.
pub fn gobal_init(
    ts: &TrainingSet,
    c: &ObservationOperator,
    opts: &GobalOptions,
) -> Result<(QRFactors, GobalState)> {
    let n_d = opts.n_d;
    let n_s = ts.n_snapshots();
    if n_d == 0 || n_d > n_s {
        return Err(Error::InvalidArgument(format!(
            "n_d = {n_d} must lie in 1..=n_s = {n_s}"
        )));
    }
    let qr = linalg::gram_factorize(&ts.y.view(), linalg::DEFAULT_GRAM_TOL)?;
    if n_d > qr.rank() {
        return Err(Error::Numerical(format!(
            "training set rank {} cannot support n_d = {n_d}; achievable n_d is {}",
            qr.rank(),
            qr.rank()
        )));
    }
    let tsvd = linalg::truncated_svd(&qr.r.view(), n_d)?;
    let mut rb = tsvd.u.clone();
    for (j, mut col) in rb.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v * tsvd.sigma[j]);
    }
    let x = SparseCodeMatrix::from_dense(&tsvd.v.t(), n_d);

    let phi = qr.q.dot(&rb);
    let mut d = c.observe(&phi)?;
    let norms: Vec<f64> = d.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let max_norm = norms.iter().cloned().fold(0.0f64, f64::max);
    if max_norm == 0.0 {
        return Err(Error::NotObservable);
    }
    let s_fallback = strongest_column(&ts.s);
    for (l, &n) in norms.iter().enumerate() {
        if n > 1e-14 * max_norm {
            d.column_mut(l).mapv_inplace(|v| v / n);
        } else {
            // Unobservable at initialization: anchor to the strongest
            // measurement direction instead.
            match &s_fallback {
                Some(col) => d.column_mut(l).assign(col),
                None => return Err(Error::DegenerateTrainingSet),
            }
        }
    }

    let err = coding_error(&qr.r, &rb, &x);
    let best = BestIterate {
        d: d.clone(),
        rb: rb.clone(),
        err,
    };
    Ok((
        qr,
        GobalState {
            d,
            rb,
            x,
            err,
            best,
        },
    ))
}

fn strongest_column(s: &Array2<f64>) -> Option<Array1<f64>> {
    let mut best: Option<(f64, usize)> = None;
    for (j, col) in s.columns().into_iter().enumerate() {
        let n = col.dot(&col).sqrt();
        if n > best.map(|(b, _)| b).unwrap_or(0.0) {
            best = Some((n, j));
        }
    }
    best.map(|(n, j)| s.column(j).mapv(|v| v / n))
}

/// Revises `n_up` randomly drawn predictor atoms in place. For each drawn
/// atom the snapshots using it define field- and measurement-space
/// residuals E_R and E_S; a one-step rank-1 estimate from E_R gives
/// temporary coefficients and the atom becomes the normalized E_S
/// projection onto them. The temporary coefficients are discarded: X is
/// not modified. Draw j of iteration r keys the generator at (seed, r, j).
pub fn features_codebook_update(
    state: &mut GobalState,
    r: &Array2<f64>,
    s: &Array2<f64>,
    n_up: usize,
    seed: u64,
    iteration: u64,
) -> Result<()> {
    let n_d = state.d.ncols();
    let usage = state.x.usage_lists();
    for j in 0..n_up {
        let mut rng = seeded::rng_at(seed, iteration, j as u64);
        let l = rng.random_range(0..n_d);
        let users = &usage[l];
        if users.is_empty() {
            replace_dead_atom(state, s, l);
            continue;
        }
        let m = users.len();
        let mut e_r = Array2::zeros((r.nrows(), m));
        let mut e_s = Array2::zeros((s.nrows(), m));
        let mut x_l = Array1::zeros(m);
        for (idx, &(col, val)) in users.iter().enumerate() {
            x_l[idx] = val;
            let xcol = &state.x.columns[col];
            let mut er = r.column(col).to_owned();
            let mut es = s.column(col).to_owned();
            for (p, &atom) in xcol.support.iter().enumerate() {
                if atom == l {
                    continue;
                }
                let v = xcol.values[p];
                er.scaled_add(-v, &state.rb.column(atom));
                es.scaled_add(-v, &state.d.column(atom));
            }
            e_r.column_mut(idx).assign(&er);
            e_s.column_mut(idx).assign(&es);
        }

        let mut x_hat = match linalg::fast_rank1_coeffs(&e_r.view(), &x_l.view()) {
            Ok(x) => Some(x),
            Err(Error::DegenerateDirection) => None,
            Err(e) => return Err(e),
        };
        if x_hat.is_none() {
            // Power-iteration fallback from random unit vectors.
            for _ in 0..3 {
                let mut x0 = Array1::from_shape_fn(m, |_| {
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                });
                let n = x0.dot(&x0).sqrt();
                if n == 0.0 {
                    continue;
                }
                x0.mapv_inplace(|v| v / n);
                if let Ok(x) = linalg::fast_rank1_coeffs(&e_r.view(), &x0.view()) {
                    x_hat = Some(x);
                    break;
                }
            }
        }
        let Some(x_hat) = x_hat else {
            replace_dead_atom(state, s, l);
            continue;
        };
        let d_new = e_s.dot(&x_hat);
        let norm = d_new.dot(&d_new).sqrt();
        let scale = linalg::fro(&e_s.view()) * x_hat.dot(&x_hat).sqrt();
        if norm <= 1e-14 * scale || norm == 0.0 {
            replace_dead_atom(state, s, l);
            continue;
        }
        state.d.column_mut(l).assign(&(&d_new / norm));
    }
    Ok(())
}

/// Re-anchors an unused atom to the strongest column of the measurement
/// residual S - D X; the matching RB column is left for the next
/// estimation codebook update.
fn replace_dead_atom(state: &mut GobalState, s: &Array2<f64>, l: usize) {
    let recon = state.x.left_mul(&state.d);
    let resid = s - &recon;
    if let Some(col) = strongest_column(&resid) {
        state.d.column_mut(l).assign(&col);
    }
}

/// RB = R X^+ via the sparsity-aware pseudo-inverse; minimizes
/// ||R - RB X||_F. Returns the updated RB and the detected rank of X
/// (below n_d flags a rank drop and a minimum-norm solution).
pub fn estimation_codebook_update(
    x: &SparseCodeMatrix,
    r: &Array2<f64>,
) -> Result<(Array2<f64>, usize)> {
    if x.is_all_zero() {
        return Err(Error::Numerical("code matrix is identically zero".into()));
    }
    let sp = linalg::sparse_pinv(x)?;
    Ok((r.dot(&sp.pinv), sp.rank))
}

#[derive(Debug, Clone, Serialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub epsilon: f64,
    pub epsilon_best: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct GobalOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<IterRecord>,
    pub converged: bool,
    pub iterations: usize,
}

fn default_beta(s: &Array2<f64>) -> f64 {
    let n = s.len();
    if n == 0 {
        return 1.0;
    }
    let energy = s.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if energy > 0.0 {
        100.0 / energy
    } else {
        1.0
    }
}

fn batch_sbl_code(
    d: &Array2<f64>,
    s: &Array2<f64>,
    beta: f64,
    beta_fixed: bool,
    max_active: usize,
) -> Result<SparseCodeMatrix> {
    let n_d = d.ncols();
    let opts = SblOptions {
        max_active: Some(max_active),
        ..SblOptions::default()
    };
    let columns: Vec<SparseColumn> = (0..s.ncols())
        .into_par_iter()
        .map(|j| {
            let mut init = SblHyper::new(n_d, beta);
            init.beta_fixed = beta_fixed;
            match sbl::sbl_solve(d, &s.column(j), &init, &opts) {
                Ok(out) => {
                    let values = out.posterior.mu.to_vec();
                    Ok(SparseColumn {
                        support: out.posterior.active,
                        values,
                        stalled: false,
                    })
                }
                // An ill-conditioned column must not abort the batch.
                Err(Error::Numerical(_)) => Ok(SparseColumn {
                    support: Vec::new(),
                    values: Vec::new(),
                    stalled: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let k_max = columns.iter().map(|c| c.nnz()).max().unwrap_or(0);
    Ok(SparseCodeMatrix {
        n_rows: n_d,
        n_cols: s.ncols(),
        columns,
        k_max,
        ops: 0,
    })
}

/// Runs the full training loop and returns the best iterate as a model
/// bundle. Stopping at r_max without meeting the convergence window is not
/// an error; the outcome carries a `converged` flag and the bundle metadata
/// records it.
pub fn gobal_learn(
    ts: &TrainingSet,
    c: &ObservationOperator,
    opts: &GobalOptions,
) -> Result<GobalOutcome> {
    let n_o = ts.n_obs();
    let n_d = opts.n_d;
    let n_up = opts.n_up.unwrap_or(n_d);
    if n_up == 0 || n_up > n_d {
        return Err(Error::InvalidArgument(format!(
            "n_up = {n_up} must lie in 1..=n_d = {n_d}"
        )));
    }
    let k_eff = opts.k.unwrap_or(n_o).min(n_d).max(1);
    let (qr, mut state) = gobal_init(ts, c, opts)?;
    let beta = opts.sbl_beta.unwrap_or_else(|| default_beta(&ts.s));

    let mut log = Vec::new();
    let mut recent: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for r_iter in 1..=opts.r_max {
        let t0 = Instant::now();
        iterations = r_iter;

        features_codebook_update(&mut state, &qr.r, &ts.s, n_up, opts.seed, r_iter as u64)?;

        state.x = match opts.sc_mode {
            ScMode::Omp => batch_sparse_code(&state.d, &ts.s, k_eff, opts.res_tol)?,
            ScMode::Sbl => batch_sbl_code(&state.d, &ts.s, beta, opts.sbl_beta_fixed, k_eff)?,
        };

        let eps = coding_error(&qr.r, &state.rb, &state.x);
        state.err = eps;
        if eps < state.best.err {
            state.best = BestIterate {
                d: state.d.clone(),
                rb: state.rb.clone(),
                err: eps,
            };
        }

        if !state.x.is_all_zero() {
            let (rb_new, _rank) = estimation_codebook_update(&state.x, &qr.r)?;
            state.rb = rb_new;
        }

        log.push(IterRecord {
            iteration: r_iter,
            epsilon: eps,
            epsilon_best: state.best.err,
            seconds: t0.elapsed().as_secs_f64(),
        });

        recent.push(eps);
        if recent.len() > opts.conv_window {
            recent.remove(0);
        }
        if recent.len() == opts.conv_window && opts.conv_window > 1 {
            let hi = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = recent.iter().cloned().fold(f64::INFINITY, f64::min);
            if hi - lo <= opts.conv_rel_tol * hi.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }

    let mut meta = Meta::new();
    meta.insert("n_o".into(), n_o.into());
    meta.insert("n_d".into(), n_d.into());
    meta.insert("n_s".into(), ts.n_snapshots().into());
    meta.insert("rank".into(), qr.rank().into());
    meta.insert("seed".into(), opts.seed.into());
    meta.insert(
        "created_by_version".into(),
        env!("CARGO_PKG_VERSION").into(),
    );
    meta.insert("k".into(), k_eff.into());
    meta.insert("sc_mode".into(), opts.sc_mode.as_str().into());
    meta.insert("n_up".into(), n_up.into());
    meta.insert("r_max".into(), opts.r_max.into());
    meta.insert("iterations".into(), iterations.into());
    meta.insert("epsilon_best".into(), state.best.err.into());
    meta.insert("converged".into(), (converged as u64).into());
    meta.insert("sbl_beta".into(), beta.into());

    let bundle = ModelBundle {
        method: Method::Gobal,
        d: state.best.d.clone(),
        rb: state.best.rb.clone(),
        q: qr.q.clone(),
        mean_field: ts.mean_field.clone(),
        mean_obs: ts.mean_obs.clone(),
        meta,
    };
    Ok(GobalOutcome {
        bundle,
        log,
        converged,
        iterations,
    })
}

/// The physical QoI dictionary Q RB (n_y x n_d).
pub fn assemble_physical_dictionary(bundle: &ModelBundle) -> Array2<f64> {
    bundle.physical_dictionary()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    Deterministic,
    Map,
}

#[derive(Debug)]
pub enum GobalEstimate {
    Deterministic(Array1<f64>),
    Map {
        field: sbl::FieldPosterior,
        posterior: sbl::SblPosterior,
        hyper: SblHyper,
    },
}

impl GobalEstimate {
    /// The field estimate regardless of mode (posterior mean in map mode).
    pub fn mean(&self) -> &Array1<f64> {
        match self {
            GobalEstimate::Deterministic(v) => v,
            GobalEstimate::Map { field, .. } => &field.mean,
        }
    }
}

/// Estimates a field from one measurement vector. Deterministic mode codes
/// the centered measurement with OMP at sparsity n_o; map mode runs the
/// sparse Bayesian solver with evidence-updated noise precision and returns
/// the induced field posterior.
pub fn gobal_estimate(
    bundle: &ModelBundle,
    s: &Array1<f64>,
    mode: EstimateMode,
) -> Result<GobalEstimate> {
    if bundle.method != Method::Gobal {
        return Err(Error::InvalidArgument(format!(
            "gobal_estimate needs a gobal bundle, got {}",
            bundle.method
        )));
    }
    if s.len() != bundle.n_obs() {
        return Err(Error::InvalidArgument(format!(
            "measurement has length {}, model expects {}",
            s.len(),
            bundle.n_obs()
        )));
    }
    let s_c = s - &bundle.mean_obs;
    let k_eff = bundle.n_obs().min(bundle.n_atoms()).max(1);
    match mode {
        EstimateMode::Deterministic => {
            let code = omp(&bundle.d, &s_c.view(), k_eff, 1e-12)?;
            let mut rbx = Array1::zeros(bundle.rank());
            for (l, &v) in code.support.iter().zip(code.coeffs.iter()) {
                rbx.scaled_add(v, &bundle.rb.column(*l));
            }
            Ok(GobalEstimate::Deterministic(
                &bundle.mean_field + &bundle.q.dot(&rbx),
            ))
        }
        EstimateMode::Map => {
            let energy = s_c.dot(&s_c);
            let beta0 = if energy > 0.0 {
                100.0 * bundle.n_obs() as f64 / energy
            } else {
                1.0
            };
            let mut init = SblHyper::new(bundle.n_atoms(), beta0);
            init.beta_fixed = false;
            let out = sbl::sbl_solve(&bundle.d, &s_c.view(), &init, &SblOptions::default())?;
            let field = sbl::field_posterior(bundle, &out.posterior)?;
            Ok(GobalEstimate::Map {
                field,
                posterior: out.posterior,
                hyper: out.hyper,
            })
        }
    }
}

/// Deterministic field estimate from any saved bundle. PCA bundles store
/// D = C Phi and lift with its pseudo-inverse; ksvd/gobal bundles code the
/// centered measurement with OMP (the K-SVD normalization scales live in
/// RB). All variants return mean_field + Q (RB x).
pub fn bundle_det_estimate(bundle: &ModelBundle, s: &Array1<f64>) -> Result<Array1<f64>> {
    if s.len() != bundle.n_obs() {
        return Err(Error::InvalidArgument(format!(
            "measurement has length {}, model expects {}",
            s.len(),
            bundle.n_obs()
        )));
    }
    if bundle.method == Method::Gobal {
        return match gobal_estimate(bundle, s, EstimateMode::Deterministic)? {
            GobalEstimate::Deterministic(v) => Ok(v),
            GobalEstimate::Map { field, .. } => Ok(field.mean),
        };
    }
    let s_c = s - &bundle.mean_obs;
    let x = match bundle.method {
        Method::Pca => linalg::dense_pinv(&bundle.d.view()).dot(&s_c),
        Method::Ksvd => {
            let k_meta = bundle
                .meta
                .get("k")
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .unwrap_or_else(|| bundle.n_obs().min(bundle.n_atoms()));
            let k_eff = k_meta.min(bundle.n_atoms()).max(1);
            let code = omp(&bundle.d, &s_c.view(), k_eff, 1e-12)?;
            let mut x = Array1::zeros(bundle.n_atoms());
            for (l, &v) in code.support.iter().zip(code.coeffs.iter()) {
                x[*l] = v;
            }
            x
        }
        Method::Gobal => unreachable!(),
    };
    Ok(&bundle.mean_field + &bundle.q.dot(&bundle.rb.dot(&x)))
}
