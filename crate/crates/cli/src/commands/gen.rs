//! `odl gen`: synthesize an ensemble, observe it, optionally corrupt the
//! measurements, and write the training files.

use std::path::Path;

use ndarray::Array2;
use ndarray::ShapeBuilder;

use odl_core::bench::{boundary_nodes, boundary_stencil_operator, synth_ensemble, SyntheticSpec};
use odl_core::matio::{center_columns, save_matrix, save_vector};
use odl_core::observation::{apply_noise, NoiseKind, NoiseSpec, ObservationOperator};
use odl_core::{seeded, Error, Result};

use crate::config::{ObsSection, RunConfig};
use crate::commands::{timestamp, write_json_atomic};

pub fn build_operator(
    section: &ObsSection,
    grid: (usize, usize),
    n_field: usize,
) -> Result<ObservationOperator> {
    match section {
        ObsSection::Points { indices } => ObservationOperator::point_restriction(indices, n_field),
        ObsSection::Stencils { stencils } => {
            ObservationOperator::stencil_operator(stencils.clone(), n_field)
        }
        ObsSection::Boundary { count, h } => {
            let pool = boundary_nodes(grid);
            if *count == 0 || *count > pool.len() {
                return Err(Error::Config(format!(
                    "boundary sensor count {count} must lie in 1..={}",
                    pool.len()
                )));
            }
            // Evenly spaced along the perimeter walk.
            let pairs: Vec<(usize, usize)> = (0..*count)
                .map(|i| pool[i * pool.len() / count])
                .collect();
            boundary_stencil_operator(&pairs, n_field, *h)
        }
    }
}

fn parse_noise_kind(kind: &str) -> Result<NoiseKind> {
    match kind {
        "none" => Ok(NoiseKind::None),
        "additive" => Ok(NoiseKind::Additive),
        "multiplicative" => Ok(NoiseKind::Multiplicative),
        other => Err(Error::Config(format!("unknown noise kind {other:?}"))),
    }
}

pub fn run(config_path: &Path, out_override: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("gen needs a data section".into()))?;
    let obs = cfg
        .observation
        .as_ref()
        .ok_or_else(|| Error::Config("gen needs an observation section".into()))?;
    let out = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory (output_dir or --out)".into()))?;

    let spec = SyntheticSpec {
        grid: data.grid,
        n_modes: data.n_modes,
        decay: data.decay,
        coeff_law: data.coeff_law,
        seed: cfg.seed,
    };
    spec.validate().map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    })?;
    let y = synth_ensemble(&spec, data.n_s)?;
    let (_, mean) = center_columns(&y)?;
    let c = build_operator(obs, data.grid, spec.n_field())?;
    let s_clean = c.observe(&y)?;

    let (s_out, noise_json) = match &cfg.noise {
        None => (s_clean, serde_json::json!({"kind": "none", "sigma": 0.0, "replicas": 1})),
        Some(n) => {
            let kind = parse_noise_kind(&n.kind)?;
            if kind == NoiseKind::None || n.sigma == 0.0 {
                (
                    s_clean,
                    serde_json::json!({"kind": "none", "sigma": 0.0, "replicas": 1}),
                )
            } else {
                let reps = n.replicas.max(1);
                let (n_o, n_s) = s_clean.dim();
                let mut s_ext = Array2::zeros((n_o, n_s * reps).f());
                for rep in 0..reps {
                    let spec = NoiseSpec {
                        kind,
                        sigma: n.sigma,
                        seed: seeded::key(cfg.seed, 7, rep as u64),
                    };
                    s_ext
                        .slice_mut(ndarray::s![.., rep * n_s..(rep + 1) * n_s])
                        .assign(&apply_noise(&s_clean, &spec));
                }
                (
                    s_ext,
                    serde_json::json!({"kind": n.kind, "sigma": n.sigma, "replicas": reps}),
                )
            }
        }
    };

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    save_matrix(&y, &out.join("Y.odl"))?;
    save_matrix(&s_out, &out.join("S.odl"))?;
    save_vector(&mean, &out.join("mean.odl"))?;
    c.save(&out.join("sensors.json"))?;

    let manifest = serde_json::json!({
        "created_by_version": odl_core::VERSION,
        "created_at": timestamp(),
        "seed": cfg.seed,
        "grid": [data.grid.0, data.grid.1],
        "n_modes": data.n_modes,
        "decay": data.decay,
        "n_s": data.n_s,
        "n_obs": c.n_obs,
        "noise": noise_json,
    });
    write_json_atomic(&out.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} snapshots ({} field points, {} sensors) to {}",
        data.n_s,
        spec.n_field(),
        c.n_obs,
        out.display()
    );
    Ok(())
}
