//! Core data model and bit-exact file I/O.
//!
//! Matrices are stored column-major: snapshots are columns and every
//! algorithm in the crate streams columns. The `ODL1` binary layout is
//!
//! ```text
//! bytes 0..4    magic "ODL1"
//! bytes 4..12   rows, unsigned 64-bit little endian
//! bytes 12..20  cols, unsigned 64-bit little endian
//! bytes 20..    rows*cols IEEE-754 binary64 little endian, column-major
//! ```
//!
//! `load_matrix` also accepts comma-separated text (one row per line, no
//! header) when the path ends in `.csv`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const MAGIC: &[u8; 4] = b"ODL1";
const HEADER_LEN: usize = 20;

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Saves a matrix in the `ODL1` binary format. Refuses non-finite entries.
pub fn save_matrix(m: &Array2<f64>, path: &Path) -> Result<()> {
    if let Some(v) = m.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "refusing to write non-finite entry {v} to {}",
            path.display()
        )));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for col in m.columns() {
        for &v in col.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

/// Loads a matrix saved by [`save_matrix`], or a headerless CSV when the
/// extension is `.csv`.
pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    if is_csv {
        return load_csv(path);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("truncated header: {} bytes, need {HEADER_LEN}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?} at byte 0, expected \"ODL1\"", &bytes[0..4]),
        ));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(path, "rows*cols overflows".to_string()))?;
    let expected = HEADER_LEN + 8 * n;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "truncated payload at byte {}: have {} bytes, expected {expected}",
                bytes.len().min(expected),
                bytes.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let off = HEADER_LEN + 8 * i;
        let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(
                path,
                format!("non-finite value at byte {off}"),
            ));
        }
        values.push(v);
    }
    Array2::from_shape_vec((rows, cols).f(), values)
        .map_err(|e| Error::format(path, e.to_string()))
}

fn load_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (colno, cell) in line.split(',').enumerate() {
            let v = f64::from_str(cell.trim()).map_err(|_| {
                Error::format(
                    path,
                    format!(
                        "non-numeric cell {:?} at line {}, column {}",
                        cell,
                        lineno + 1,
                        colno + 1
                    ),
                )
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::format(
                    path,
                    format!(
                        "line {} has {} cells, expected {}",
                        lineno + 1,
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(path, "empty CSV".to_string()));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_fn((nr, nc).f(), |(i, j)| rows[i][j]))
}

/// Saves a vector as an n-by-1 `ODL1` matrix.
pub fn save_vector(v: &Array1<f64>, path: &Path) -> Result<()> {
    let m = v
        .view()
        .into_shape_with_order(((v.len(), 1), ndarray::Order::ColumnMajor))
        .expect("vector reshape");
    save_matrix(&m.to_owned(), path)
}

/// Loads an n-by-1 `ODL1` matrix as a vector.
pub fn load_vector(path: &Path) -> Result<Array1<f64>> {
    let m = load_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Error::format(
            path,
            format!("expected a column vector, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m.column(0).to_owned())
}

/// Removes the per-row mean over snapshots: returns (Y - mean 1^T, mean).
pub fn center_columns(y: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    if y.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "cannot center a matrix with zero columns".into(),
        ));
    }
    let mean = y.mean_axis(Axis(1)).expect("ncols >= 1");
    let mut yc = y.to_owned();
    for mut col in yc.columns_mut() {
        col -= &mean;
    }
    Ok((yc, mean))
}

/// Paired, centered training data: field snapshots and their measurements.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// Centered field snapshots, n_y x n_s.
    pub y: Array2<f64>,
    /// Centered measurements, n_o x n_s.
    pub s: Array2<f64>,
    pub mean_field: Array1<f64>,
    pub mean_obs: Array1<f64>,
    pub centered: bool,
}

impl TrainingSet {
    /// Centers raw snapshot and measurement matrices into a training set.
    pub fn from_raw(y_raw: &Array2<f64>, s_raw: &Array2<f64>) -> Result<Self> {
        if y_raw.ncols() != s_raw.ncols() {
            return Err(Error::InvalidArgument(format!(
                "snapshot count mismatch: Y has {} columns, S has {}",
                y_raw.ncols(),
                s_raw.ncols()
            )));
        }
        let (y, mean_field) = center_columns(y_raw)?;
        let (s, mean_obs) = center_columns(s_raw)?;
        Ok(TrainingSet {
            y,
            s,
            mean_field,
            mean_obs,
            centered: true,
        })
    }

    /// Wraps data that is already centered.
    pub fn from_centered(
        y: Array2<f64>,
        s: Array2<f64>,
        mean_field: Array1<f64>,
        mean_obs: Array1<f64>,
    ) -> Result<Self> {
        if y.ncols() != s.ncols() {
            return Err(Error::InvalidArgument(
                "snapshot count mismatch between Y and S".into(),
            ));
        }
        Ok(TrainingSet {
            y,
            s,
            mean_field,
            mean_obs,
            centered: true,
        })
    }

    pub fn n_snapshots(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_field(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.s.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Ksvd,
    Gobal,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Ksvd => "ksvd",
            Method::Gobal => "gobal",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Method::Pca),
            "ksvd" => Ok(Method::Ksvd),
            "gobal" => Ok(Method::Gobal),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

pub type Meta = BTreeMap<String, serde_json::Value>;

/// A trained estimator: predictor dictionary D (n_o x n_d), reduced QoI
/// dictionary RB (rank x n_d), orthonormal factor Q (n_y x rank), centering
/// vectors and provenance metadata.
///
/// The physical QoI dictionary is the product Q RB; it is never stored.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub method: Method,
    pub d: Array2<f64>,
    pub rb: Array2<f64>,
    pub q: Array2<f64>,
    pub mean_field: Array1<f64>,
    pub mean_obs: Array1<f64>,
    pub meta: Meta,
}

const REQUIRED_META: &[&str] = &[
    "method",
    "n_o",
    "n_d",
    "n_s",
    "rank",
    "seed",
    "created_by_version",
];

impl ModelBundle {
    pub fn n_obs(&self) -> usize {
        self.d.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.d.ncols()
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn n_field(&self) -> usize {
        self.q.nrows()
    }

    /// Assembles the physical QoI dictionary Q RB (n_y x n_d).
    pub fn physical_dictionary(&self) -> Array2<f64> {
        self.q.dot(&self.rb)
    }

    /// Checks shape consistency and the per-method dictionary invariants:
    /// orthonormal Q for pca/gobal (K-SVD stores its unit-norm, generally
    /// non-orthogonal dictionary in Q), unit-norm D columns for ksvd/gobal.
    pub fn validate(&self) -> Result<()> {
        if self.q.ncols() != self.rb.nrows() {
            return Err(Error::InvalidArgument(format!(
                "Q has {} columns but RB has {} rows",
                self.q.ncols(),
                self.rb.nrows()
            )));
        }
        if self.d.ncols() != self.rb.ncols() {
            return Err(Error::InvalidArgument(format!(
                "D has {} columns but RB has {}",
                self.d.ncols(),
                self.rb.ncols()
            )));
        }
        if self.mean_field.len() != self.q.nrows() {
            return Err(Error::InvalidArgument(
                "mean_field length does not match Q rows".into(),
            ));
        }
        if self.mean_obs.len() != self.d.nrows() {
            return Err(Error::InvalidArgument(
                "mean_obs length does not match D rows".into(),
            ));
        }
        match self.method {
            Method::Pca | Method::Gobal => {
                let dev = linalg::orthonormality_defect(&self.q);
                if dev > 1e-8 {
                    return Err(Error::Numerical(format!(
                        "Q deviates from orthonormality by {dev:.3e}"
                    )));
                }
            }
            Method::Ksvd => {
                for (l, col) in self.q.columns().into_iter().enumerate() {
                    let n = col.dot(&col).sqrt();
                    if (n - 1.0).abs() > 1e-8 {
                        return Err(Error::Numerical(format!(
                            "K-SVD dictionary column {l} has norm {n}"
                        )));
                    }
                }
            }
        }
        if matches!(self.method, Method::Ksvd | Method::Gobal) {
            for (l, col) in self.d.columns().into_iter().enumerate() {
                let n = col.dot(&col).sqrt();
                if (n - 1.0).abs() > 1e-10 {
                    return Err(Error::Numerical(format!(
                        "predictor column {l} has norm {n}, expected unit"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the bundle as a directory of independently loadable parts:
    /// D.odl, RB.odl, Q.odl, mean.odl, mean_obs.odl and meta.json.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for key in REQUIRED_META {
            if *key != "method" && !self.meta.contains_key(*key) {
                return Err(Error::Config(format!("meta is missing required key {key:?}")));
            }
        }
        for (k, v) in &self.meta {
            if !(v.is_string() || v.is_number()) {
                return Err(Error::Config(format!(
                    "meta value for {k:?} must be a string or number"
                )));
            }
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_matrix(&self.d, &dir.join("D.odl"))?;
        save_matrix(&self.rb, &dir.join("RB.odl"))?;
        save_matrix(&self.q, &dir.join("Q.odl"))?;
        save_vector(&self.mean_field, &dir.join("mean.odl"))?;
        save_vector(&self.mean_obs, &dir.join("mean_obs.odl"))?;
        let mut meta = self.meta.clone();
        meta.insert("method".into(), self.method.as_str().into());
        let text = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::Config(format!("cannot serialize meta: {e}")))?;
        write_atomic(&dir.join("meta.json"), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: Meta = serde_json::from_str(&text)
            .map_err(|e| Error::format(&meta_path, e.to_string()))?;
        let method_str = meta
            .get("method")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::format(&meta_path, "missing \"method\" key".to_string()))?;
        let method = method_str.parse()?;
        let bundle = ModelBundle {
            method,
            d: load_matrix(&dir.join("D.odl"))?,
            rb: load_matrix(&dir.join("RB.odl"))?,
            q: load_matrix(&dir.join("Q.odl"))?,
            mean_field: load_vector(&dir.join("mean.odl"))?,
            mean_obs: load_vector(&dir.join("mean_obs.odl"))?,
            meta,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn odl1_single_entry_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.odl");
        let m = array![[7.0]];
        save_matrix(&m, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        // 4 magic + 8 rows + 8 cols + 8 payload.
        assert_eq!(bytes.len(), 28);
        assert_eq!(&bytes[0..4], b"ODL1");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1);
        assert_eq!(
            f64::from_le_bytes(bytes[20..28].try_into().unwrap()),
            7.0
        );
    }

    #[test]
    fn odl1_identity_file_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eye.odl");
        save_matrix(&Array2::eye(2), &path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), 4 + 8 + 8 + 32);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.odl");
        let m = Array2::from_shape_fn((13, 7).f(), |(i, j)| {
            crate::seeded::normal_at(99, i as u64, j as u64)
        });
        save_matrix(&m, &path).unwrap();
        let back = load_matrix(&path).unwrap();
        assert_eq!(back.dim(), (13, 7));
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.odl");
        let mut bytes = vec![];
        bytes.extend_from_slice(b"XXXX");
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.odl");
        let mut bytes = vec![];
        bytes.extend_from_slice(b"ODL1");
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = load_matrix(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn non_finite_is_refused_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let m = array![[1.0, f64::NAN]];
        assert!(matches!(
            save_matrix(&m, &dir.path().join("nan.odl")),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn csv_parses_and_reports_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,2\n3,4\n").unwrap();
        let m = load_matrix(&path).unwrap();
        assert_eq!(m, array![[1.0, 2.0], [3.0, 4.0]]);

        fs::write(&path, "1,2\n3,abc\n").unwrap();
        let err = load_matrix(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn valid_odl_reports_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.odl");
        save_matrix(&Array2::zeros((3, 2)), &path).unwrap();
        let m = load_matrix(&path).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (3, 2));
    }

    #[test]
    fn centering_matches_hand_case() {
        let y = array![[1.0, 3.0], [2.0, 2.0]];
        let (yc, mean) = center_columns(&y).unwrap();
        assert_eq!(mean, array![2.0, 2.0]);
        assert_eq!(yc, array![[-1.0, 1.0], [0.0, 0.0]]);
    }

    #[test]
    fn single_column_centers_to_zero() {
        let y = array![[4.0], [-1.5]];
        let (yc, _) = center_columns(&y).unwrap();
        assert!(yc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centering_roundtrip_reconstructs() {
        let y = Array2::from_shape_fn((50, 9).f(), |(i, j)| {
            crate::seeded::normal_at(5, i as u64, j as u64) + i as f64
        });
        let (yc, mean) = center_columns(&y).unwrap();
        let scale = y.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        for j in 0..9 {
            for i in 0..50 {
                let back = yc[[i, j]] + mean[i];
                assert!((back - y[[i, j]]).abs() <= 1e-14 * scale);
            }
        }
        // Per-row snapshot means vanish after centering.
        let rowmean = yc.mean_axis(Axis(1)).unwrap();
        let norm = mean.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
        assert!(rowmean.iter().all(|v| v.abs() <= 1e-12 * norm.max(1.0)));
    }

    #[test]
    fn bundle_roundtrips_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let q = Array2::eye(4);
        let mut meta = Meta::new();
        meta.insert("n_o".into(), 2.into());
        meta.insert("n_d".into(), 3.into());
        meta.insert("n_s".into(), 5.into());
        meta.insert("rank".into(), 4.into());
        meta.insert("seed".into(), 1.into());
        meta.insert("created_by_version".into(), "0.1.0".into());
        let mut d = Array2::zeros((2, 3));
        for mut c in d.columns_mut() {
            c[0] = 1.0;
        }
        let bundle = ModelBundle {
            method: Method::Gobal,
            d,
            rb: Array2::zeros((4, 3)),
            q,
            mean_field: Array1::zeros(4),
            mean_obs: Array1::zeros(2),
            meta,
        };
        bundle.save(dir.path()).unwrap();
        let back = ModelBundle::load(dir.path()).unwrap();
        assert_eq!(back.method, Method::Gobal);
        assert_eq!(back.d, bundle.d);
        assert_eq!(back.rb, bundle.rb);
        assert_eq!(back.q, bundle.q);
    }
}
