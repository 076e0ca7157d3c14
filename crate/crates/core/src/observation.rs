//! Linear observation operators and measurement-noise models.
//!
//! An operator is a short list of sparse rows mapping field space to
//! measurement space: point restrictions pick single entries, stencils
//! apply weighted combinations (one-sided finite differences emulate
//! wall-mounted shear probes). Noise is Gaussian, keyed per entry on
//! (seed, column, row), so the stream is identical under any scheduling.

use ndarray::{Array1, Array2, ArrayView1, ShapeBuilder};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matio::write_atomic;
use crate::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationOperator {
    pub n_obs: usize,
    pub n_field: usize,
    /// One sparse row per sensor: (field index, weight) pairs.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl ObservationOperator {
    /// Point sensors: row j reads field entry `indices[j]`.
    pub fn point_restriction(indices: &[usize], n_field: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("zero sensors".into()));
        }
        let mut seen = vec![false; n_field];
        for &i in indices {
            if i >= n_field {
                return Err(Error::InvalidArgument(format!(
                    "sensor index {i} out of range for field of size {n_field}"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidArgument(format!("duplicate sensor index {i}")));
            }
            seen[i] = true;
        }
        let rows = indices.iter().map(|&i| vec![(i, 1.0)]).collect();
        Ok(ObservationOperator {
            n_obs: indices.len(),
            n_field,
            rows,
        })
    }

    /// Weighted-stencil sensors; each row applies the given weights.
    pub fn stencil_operator(stencils: Vec<Vec<(usize, f64)>>, n_field: usize) -> Result<Self> {
        if stencils.is_empty() {
            return Err(Error::InvalidArgument("zero sensors".into()));
        }
        let op = ObservationOperator {
            n_obs: stencils.len(),
            n_field,
            rows: stencils,
        };
        op.validate()?;
        Ok(op)
    }

    /// Full restriction of the field (one point sensor per entry).
    pub fn identity(n_field: usize) -> Self {
        ObservationOperator {
            n_obs: n_field,
            n_field,
            rows: (0..n_field).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() != self.n_obs {
            return Err(Error::InvalidArgument(format!(
                "operator declares {} rows but carries {}",
                self.n_obs,
                self.rows.len()
            )));
        }
        for (j, row) in self.rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidArgument(format!("sensor row {j} is empty")));
            }
            let mut idx: Vec<usize> = row.iter().map(|&(i, _)| i).collect();
            idx.sort_unstable();
            for w in idx.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::InvalidArgument(format!(
                        "sensor row {j} repeats field index {}",
                        w[0]
                    )));
                }
            }
            for &(i, w) in row {
                if i >= self.n_field {
                    return Err(Error::InvalidArgument(format!(
                        "sensor row {j} references field index {i} >= {}",
                        self.n_field
                    )));
                }
                if !w.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "sensor row {j} has non-finite weight"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies the operator to one field vector.
    pub fn apply(&self, y: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if y.len() != self.n_field {
            return Err(Error::InvalidArgument(format!(
                "field has length {}, operator expects {}",
                y.len(),
                self.n_field
            )));
        }
        let mut s = Array1::zeros(self.n_obs);
        for (j, row) in self.rows.iter().enumerate() {
            s[j] = row.iter().map(|&(i, w)| w * y[i]).sum();
        }
        Ok(s)
    }

    /// Applies the operator to every column of a snapshot matrix.
    pub fn observe(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        if y.nrows() != self.n_field {
            return Err(Error::InvalidArgument(format!(
                "snapshots have {} rows, operator expects {}",
                y.nrows(),
                self.n_field
            )));
        }
        let mut s = Array2::zeros((self.n_obs, y.ncols()).f());
        for (c, col) in y.columns().into_iter().enumerate() {
            for (j, row) in self.rows.iter().enumerate() {
                s[[j, c]] = row.iter().map(|&(i, w)| w * col[i]).sum();
            }
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize operator: {e}")))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let op: ObservationOperator =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        op.validate()?;
        Ok(op)
    }
}

/// First-order one-sided derivative weights (+1/h, -1/h) for nodes
/// (outer, inner) a distance h apart: the row evaluates
/// (y[outer] - y[inner]) / h.
pub fn first_order_stencil(outer: usize, inner: usize, h: f64) -> Vec<(usize, f64)> {
    vec![(outer, 1.0 / h), (inner, -1.0 / h)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Additive,
    Multiplicative,
}

/// Measurement-noise model: isotropic Gaussian of standard deviation
/// `sigma`, either added to or modulating each measurement entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            kind: NoiseKind::None,
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if self.kind == NoiseKind::None && self.sigma != 0.0 {
            return Err(Error::InvalidArgument(
                "noise kind none requires sigma = 0".into(),
            ));
        }
        Ok(())
    }
}

/// Corrupts measurements per the noise model. Additive: S + sigma G;
/// multiplicative: (1 + sigma G) entrywise-times S, with G standard normal
/// keyed on (seed, column, row).
pub fn apply_noise(s: &Array2<f64>, spec: &NoiseSpec) -> Array2<f64> {
    if spec.kind == NoiseKind::None || spec.sigma == 0.0 {
        return s.clone();
    }
    let mut out = s.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        let g = seeded::normal_at(spec.seed, j as u64, i as u64);
        *v = match spec.kind {
            NoiseKind::Additive => *v + spec.sigma * g,
            NoiseKind::Multiplicative => (1.0 + spec.sigma * g) * *v,
            NoiseKind::None => unreachable!(),
        };
    }
    out
}
