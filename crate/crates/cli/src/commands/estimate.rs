//! `odl estimate`: lift measurement columns to field estimates with a
//! saved bundle; map mode additionally writes the posterior spread.

use std::path::Path;

use ndarray::{Array2, ShapeBuilder};

use odl_core::gobal::{bundle_det_estimate, gobal_estimate, EstimateMode, GobalEstimate};
use odl_core::matio::{load_matrix, save_matrix, Method, ModelBundle};
use odl_core::{Error, Result};

use crate::commands::write_json_atomic;

pub fn run(model_dir: &Path, s_path: &Path, mode: &str, out: &Path) -> Result<()> {
    let bundle = ModelBundle::load(model_dir)?;
    let s = load_matrix(s_path)?;
    if s.nrows() != bundle.n_obs() {
        return Err(Error::InvalidArgument(format!(
            "measurements have {} rows, model expects {}",
            s.nrows(),
            bundle.n_obs()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let n_y = bundle.n_field();
    let n_cols = s.ncols();

    match mode {
        "det" => {
            let mut yhat = Array2::zeros((n_y, n_cols).f());
            for j in 0..n_cols {
                let est = bundle_det_estimate(&bundle, &s.column(j).to_owned())?;
                yhat.column_mut(j).assign(&est);
            }
            save_matrix(&yhat, &out.join("yhat.odl"))?;
        }
        "map" => {
            if bundle.method != Method::Gobal {
                return Err(Error::Config(format!(
                    "map mode needs a gobal bundle, got {}",
                    bundle.method
                )));
            }
            let mut yhat = Array2::zeros((n_y, n_cols).f());
            let mut diag_std = Array2::zeros((n_y, n_cols).f());
            let mut posteriors = Vec::with_capacity(n_cols);
            for j in 0..n_cols {
                let est = gobal_estimate(&bundle, &s.column(j).to_owned(), EstimateMode::Map)?;
                let GobalEstimate::Map {
                    field,
                    posterior,
                    hyper,
                } = est
                else {
                    unreachable!()
                };
                yhat.column_mut(j).assign(&field.mean);
                diag_std.column_mut(j).assign(&field.diag_std);
                posteriors.push(serde_json::json!({
                    "column": j,
                    "active": posterior.active,
                    "mu": posterior.mu.to_vec(),
                    "lambda": hyper.lambda,
                    "beta": hyper.beta,
                    "log_evidence": posterior.log_evidence,
                }));
            }
            save_matrix(&yhat, &out.join("yhat.odl"))?;
            save_matrix(&diag_std, &out.join("diag_std.odl"))?;
            write_json_atomic(&out.join("posterior.json"), &serde_json::Value::Array(posteriors))?;
        }
        other => return Err(Error::Config(format!("unknown mode {other:?}, expected det or map"))),
    }
    println!("estimated {n_cols} fields -> {}", out.display());
    Ok(())
}
