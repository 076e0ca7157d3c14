//! JSON run configuration. Sweep configs are reviewable artifacts; flags
//! override config keys.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use odl_core::bench::CoeffLaw;
use odl_core::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
pub struct RunConfig {
    /// Required: every pipeline is a pure function of (inputs, config, seed).
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub data: Option<DataSection>,
    pub observation: Option<ObsSection>,
    pub noise: Option<NoiseSection>,
    pub method: Option<MethodSection>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DataSection {
    pub grid: (usize, usize),
    pub n_modes: usize,
    pub decay: f64,
    #[serde(default = "default_law")]
    pub coeff_law: CoeffLaw,
    pub n_s: usize,
}

fn default_law() -> CoeffLaw {
    CoeffLaw::Gaussian
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObsSection {
    /// Point sensors at the given flat field indices.
    Points { indices: Vec<usize> },
    /// Explicit weighted stencils, one row per sensor.
    Stencils { stencils: Vec<Vec<(usize, f64)>> },
    /// `count` wall-derivative sensors evenly spaced along the grid
    /// boundary.
    Boundary {
        count: usize,
        #[serde(default = "default_h")]
        h: f64,
    },
}

fn default_h() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
pub struct NoiseSection {
    pub kind: String,
    pub sigma: f64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
}

fn default_replicas() -> usize {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct MethodSection {
    pub name: Option<String>,
    pub n_d: Option<usize>,
    pub k: Option<usize>,
    pub iterations: Option<usize>,
    pub r_max: Option<usize>,
    pub sc_mode: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
