//! `odl train`: build a TrainingSet from files and write a model bundle.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ShapeBuilder};

use odl_core::baselines::{ksvd_learn, pca_learn};
use odl_core::gobal::{gobal_learn, GobalOptions, IterRecord, ScMode};
use odl_core::linalg;
use odl_core::matio::{self, load_matrix, Meta, Method, ModelBundle, TrainingSet};
use odl_core::observation::ObservationOperator;
use odl_core::{Error, Result};

use crate::config::{MethodSection, RunConfig};

pub struct Args {
    pub method: String,
    pub y: PathBuf,
    pub s: PathBuf,
    pub sensors: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub n_d: Option<usize>,
    pub k: Option<usize>,
    pub iterations: Option<usize>,
    pub r_max: Option<usize>,
    pub sc_mode: Option<String>,
    pub seed: Option<u64>,
}

/// Effective method parameters: config section overridden by flags.
struct Params {
    n_d: Option<usize>,
    k: Option<usize>,
    iterations: usize,
    r_max: usize,
    sc_mode: ScMode,
    seed: u64,
}

fn resolve_params(args: &Args) -> Result<Params> {
    let (section, cfg_seed) = match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            (cfg.method.unwrap_or_default(), Some(cfg.seed))
        }
        None => (MethodSection::default(), None),
    };
    let sc_mode = match args.sc_mode.as_deref().or(section.sc_mode.as_deref()) {
        None | Some("omp") => ScMode::Omp,
        Some("sbl") => ScMode::Sbl,
        Some(other) => return Err(Error::Config(format!("unknown sc_mode {other:?}"))),
    };
    let seed = args
        .seed
        .or(cfg_seed)
        .ok_or_else(|| Error::Config("no seed (config seed or --seed)".into()))?;
    Ok(Params {
        n_d: args.n_d.or(section.n_d),
        k: args.k.or(section.k),
        iterations: args.iterations.or(section.iterations).unwrap_or(50),
        r_max: args.r_max.or(section.r_max).unwrap_or(100),
        sc_mode,
        seed,
    })
}

/// Columns of S that are an integer multiple of Y's are read as noisy
/// measurement replicas; Y is tiled to match.
fn align_replicas(y: Array2<f64>, s: &Array2<f64>) -> Result<Array2<f64>> {
    let (n_sy, n_ss) = (y.ncols(), s.ncols());
    if n_sy == 0 || n_ss == 0 || n_ss % n_sy != 0 {
        return Err(Error::InvalidArgument(format!(
            "S has {n_ss} columns which is not a multiple of Y's {n_sy}"
        )));
    }
    let reps = n_ss / n_sy;
    if reps == 1 {
        return Ok(y);
    }
    let mut y_ext = Array2::zeros((y.nrows(), n_ss).f());
    for rep in 0..reps {
        y_ext
            .slice_mut(ndarray::s![.., rep * n_sy..(rep + 1) * n_sy])
            .assign(&y);
    }
    Ok(y_ext)
}

fn base_meta(ts: &TrainingSet, n_d: usize, rank: usize, seed: u64) -> Meta {
    let mut meta = Meta::new();
    meta.insert("n_o".into(), ts.n_obs().into());
    meta.insert("n_d".into(), n_d.into());
    meta.insert("n_s".into(), ts.n_snapshots().into());
    meta.insert("rank".into(), rank.into());
    meta.insert("seed".into(), seed.into());
    meta.insert("created_by_version".into(), odl_core::VERSION.into());
    meta
}

fn write_training_log(path: &Path, rows: &[IterRecord]) -> Result<()> {
    let mut text = String::from("iteration,epsilon,epsilon_best,seconds\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.iteration, r.epsilon, r.epsilon_best, r.seconds
        ));
    }
    matio::write_atomic(path, text.as_bytes())
}

pub fn run(args: Args) -> Result<()> {
    let method: Method = args.method.parse().map_err(|_| {
        Error::Config(format!("unknown method {:?}", args.method))
    })?;
    if let Some(cfg_path) = &args.config {
        let cfg = RunConfig::load(cfg_path)?;
        if let Some(name) = cfg.method.and_then(|m| m.name) {
            if name != args.method {
                return Err(Error::Config(format!(
                    "--method {} conflicts with config method name {name:?}",
                    args.method
                )));
            }
        }
    }
    let params = resolve_params(&args)?;

    let y_raw = load_matrix(&args.y)?;
    let s_raw = load_matrix(&args.s)?;
    let c = ObservationOperator::load(&args.sensors)?;
    if y_raw.nrows() != c.n_field {
        return Err(Error::InvalidArgument(format!(
            "Y has {} rows but the operator expects a field of size {}",
            y_raw.nrows(),
            c.n_field
        )));
    }
    let y_ext = align_replicas(y_raw, &s_raw)?;
    let ts = TrainingSet::from_raw(&y_ext, &s_raw)?;
    let n_o = ts.n_obs();
    let n_d = params.n_d.unwrap_or(n_o);

    let (bundle, log) = match method {
        Method::Pca => {
            let model = pca_learn(&ts, n_d)?;
            let g = c.observe(&model.modes)?;
            if g.iter().all(|&v| v == 0.0) {
                return Err(Error::NotObservable);
            }
            let fit = {
                let proj = model.modes.dot(&model.modes.t().dot(&ts.y));
                linalg::fro(&(&ts.y - &proj).view()) / linalg::fro(&ts.y.view()).max(1e-300)
            };
            let mut meta = base_meta(&ts, n_d, n_d, params.seed);
            meta.insert("k".into(), n_d.min(n_o).into());
            let bundle = ModelBundle {
                method: Method::Pca,
                d: g,
                rb: Array2::eye(n_d),
                q: model.modes,
                mean_field: ts.mean_field.clone(),
                mean_obs: ts.mean_obs.clone(),
                meta,
            };
            let log = vec![IterRecord {
                iteration: 0,
                epsilon: fit,
                epsilon_best: fit,
                seconds: 0.0,
            }];
            (bundle, log)
        }
        Method::Ksvd => {
            let k = params.k.unwrap_or(n_o).min(n_d);
            let out = ksvd_learn(&ts, n_d, k, params.iterations, params.seed)?;
            let g = c.observe(&out.model.dictionary)?;
            let scales: Vec<f64> = g.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
            let max_scale = scales.iter().cloned().fold(0.0f64, f64::max);
            if max_scale == 0.0 {
                return Err(Error::NotObservable);
            }
            let kept: Vec<usize> = (0..n_d)
                .filter(|&l| scales[l] > 1e-12 * max_scale)
                .collect();
            let mut d = Array2::zeros((n_o, kept.len()).f());
            let mut q = Array2::zeros((out.model.dictionary.nrows(), kept.len()).f());
            let mut rb = Array2::zeros((kept.len(), kept.len()).f());
            for (j, &l) in kept.iter().enumerate() {
                d.column_mut(j).assign(&(&g.column(l) / scales[l]));
                q.column_mut(j).assign(&out.model.dictionary.column(l));
                rb[[j, j]] = 1.0 / scales[l];
            }
            let mut meta = base_meta(&ts, kept.len(), kept.len(), params.seed);
            meta.insert("k".into(), k.into());
            meta.insert("iterations".into(), (out.error_history.len() - 1).into());
            meta.insert("dropped_atoms".into(), (n_d - kept.len()).into());
            meta.insert("epsilon_best".into(), out.best_error.into());
            let bundle = ModelBundle {
                method: Method::Ksvd,
                d,
                rb,
                q,
                mean_field: ts.mean_field.clone(),
                mean_obs: ts.mean_obs.clone(),
                meta,
            };
            let mut best = f64::INFINITY;
            let log = out
                .error_history
                .iter()
                .enumerate()
                .map(|(i, &e)| {
                    best = best.min(e);
                    IterRecord {
                        iteration: i,
                        epsilon: e,
                        epsilon_best: best,
                        seconds: 0.0,
                    }
                })
                .collect();
            (bundle, log)
        }
        Method::Gobal => {
            let mut opts = GobalOptions::new(n_d, params.seed);
            opts.r_max = params.r_max;
            opts.sc_mode = params.sc_mode;
            opts.k = params.k;
            let out = gobal_learn(&ts, &c, &opts)?;
            (out.bundle, out.log)
        }
    };

    bundle.validate()?;
    bundle.save(&args.out)?;
    write_training_log(&args.out.join("training_log.csv"), &log)?;
    println!(
        "trained {} (n_o = {}, n_d = {}) -> {}",
        method,
        bundle.n_obs(),
        bundle.n_atoms(),
        args.out.display()
    );
    Ok(())
}
