//! On-disk formats: coefficient dumps, space-time fields and matrices as
//! little-endian float64 binaries with JSON sidecars, and Gaussian batches.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::forward::SpaceTimeField;
use crate::gaussian::GaussianSampleBatch;
use crate::spectral::{EigenSystem, Subspace};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_le_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return invalid(format!("binary length {} is not a multiple of 8", bytes.len()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn with_extension(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub d: usize,
    #[serde(rename = "K")]
    pub kmax: usize,
    pub subspace: Subspace,
    pub components: usize,
}

impl GridInfo {
    pub fn of(es: &EigenSystem) -> Self {
        Self { d: es.dim(), kmax: es.kmax(), subspace: es.subspace(), components: es.components() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub index: usize,
    pub k: Vec<i32>,
    pub component: usize,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDump {
    pub d: usize,
    #[serde(rename = "K")]
    pub kmax: usize,
    pub subspace: Subspace,
    pub components: usize,
    pub entries: Vec<CoefficientEntry>,
}

/// Complex Fourier coefficient of each eigenvector's own wavevector, in
/// eigensystem order.
pub fn coefficient_dump(es: &EigenSystem, coords: &[f64]) -> Result<CoefficientDump> {
    if coords.len() > es.len() {
        return invalid(format!("{} coordinates for a basis of {}", coords.len(), es.len()));
    }
    let f = es.to_fourier(coords);
    let mut entries = Vec::with_capacity(es.len() * es.components());
    for (j, m) in es.modes().iter().enumerate() {
        for c in 0..es.components() {
            let z = f.get(c, m.wavevector);
            entries.push(CoefficientEntry { index: j, k: m.wavevector[..es.dim()].to_vec(), component: c, re: z.re, im: z.im });
        }
    }
    Ok(CoefficientDump { d: es.dim(), kmax: es.kmax(), subspace: es.subspace(), components: es.components(), entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub model: String,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "M")]
    pub steps: usize,
    pub grid: GridInfo,
    pub modes: usize,
    pub binary: String,
    pub sha256: String,
    /// Sections of the binary, in order: node coordinates (M+1)×modes, the
    /// per-step dense-output coefficients M×modes×4, and the modal rates.
    pub layout: Vec<String>,
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn write_field(stem: &Path, field: &SpaceTimeField, model: &str) -> Result<FieldHeader> {
    let es = field.eigensystem();
    let n = es.len();
    let mut values = Vec::with_capacity((field.steps() + 1) * n + field.steps() * n * 4 + n);
    for i in 0..=field.steps() {
        values.extend(field.node(i));
    }
    values.extend(field.dense_poly().into_iter().flatten());
    values.extend(field.rates().iter().copied());
    let bytes = to_le_bytes(values);
    let bin = with_extension(stem, ".bin");
    let header = FieldHeader {
        model: model.to_string(),
        horizon: field.horizon(),
        steps: field.steps(),
        grid: GridInfo::of(es),
        modes: n,
        binary: file_name(&bin),
        sha256: sha256_hex(&bytes),
        layout: vec!["nodes[M+1][modes]".into(), "dense[M][modes][4]".into(), "rates[modes]".into()],
    };
    fs::write(&bin, &bytes)?;
    fs::write(with_extension(stem, ".json"), serde_json::to_vec_pretty(&header)?)?;
    Ok(header)
}

/// Reads a field written by [`write_field`], checking the digest.
pub fn read_field(stem: &Path) -> Result<(FieldHeader, SpaceTimeField)> {
    let header: FieldHeader = serde_json::from_slice(&fs::read(with_extension(stem, ".json"))?)?;
    let bytes = fs::read(with_extension(stem, ".bin"))?;
    if sha256_hex(&bytes) != header.sha256 {
        return Err(Error::Config(format!("{}: digest mismatch", header.binary)));
    }
    let v = from_le_bytes(&bytes)?;
    let (n, m) = (header.modes, header.steps);
    if v.len() != (m + 1) * n + m * n * 4 + n {
        return invalid("field binary has the wrong length");
    }
    let g = &header.grid;
    let es = Arc::new(EigenSystem::build(g.d, g.kmax, g.subspace)?);
    if es.len() != n {
        return invalid("field header disagrees with its eigensystem");
    }
    let dense_at = (m + 1) * n;
    let poly: Vec<[f64; 4]> = v[dense_at..dense_at + 4 * m * n].chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
    let rates = v[dense_at + 4 * m * n..].to_vec();
    let last = v[m * n..(m + 1) * n].to_vec();
    let field = SpaceTimeField::from_parts(es, rates, header.horizon, m, poly, last)?;
    Ok((header, field))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub layout: String,
    pub dtype: String,
    pub binary: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

fn write_row_major(
    stem: &Path,
    name: &str,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    meta: serde_json::Map<String, serde_json::Value>,
) -> Result<MatrixHeader> {
    let bytes = to_le_bytes(values);
    let bin = with_extension(stem, ".bin");
    let header = MatrixHeader {
        name: name.to_string(),
        rows,
        cols,
        layout: "row-major".into(),
        dtype: "float64-le".into(),
        binary: file_name(&bin),
        sha256: sha256_hex(&bytes),
        meta,
    };
    fs::write(&bin, &bytes)?;
    fs::write(with_extension(stem, ".json"), serde_json::to_vec_pretty(&header)?)?;
    Ok(header)
}

pub fn write_matrix(stem: &Path, name: &str, m: &DMatrix<f64>) -> Result<MatrixHeader> {
    let values = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
    write_row_major(stem, name, m.nrows(), m.ncols(), values, Default::default())
}

pub fn read_matrix(stem: &Path) -> Result<(MatrixHeader, DMatrix<f64>)> {
    let header: MatrixHeader = serde_json::from_slice(&fs::read(with_extension(stem, ".json"))?)?;
    let bytes = fs::read(with_extension(stem, ".bin"))?;
    if sha256_hex(&bytes) != header.sha256 {
        return Err(Error::Config(format!("{}: digest mismatch", header.binary)));
    }
    let v = from_le_bytes(&bytes)?;
    if v.len() != header.rows * header.cols {
        return invalid("matrix binary has the wrong length");
    }
    Ok((header.clone(), DMatrix::from_row_slice(header.rows, header.cols, &v)))
}

/// Batch dump: header {K, m, seed, model_hash} plus the m×K sample matrix.
pub fn write_batch(stem: &Path, batch: &GaussianSampleBatch, model_hash: &str) -> Result<MatrixHeader> {
    let mut meta = serde_json::Map::new();
    meta.insert("K".into(), batch.k.into());
    meta.insert("m".into(), batch.m.into());
    meta.insert("seed".into(), batch.seed.into());
    meta.insert("model_hash".into(), model_hash.into());
    write_row_major(stem, "gaussian-batch", batch.m, batch.k, batch.to_row_major(), meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ForwardModel;

    #[test]
    fn coefficient_dump_of_a_cosine() {
        let es = EigenSystem::build(1, 3, Subspace::Full).unwrap();
        let j = es.index_of([1, 0]).unwrap();
        let mut u = vec![0.0; es.len()];
        // √2 · √2 cos 2πx = e^{2πix} + e^{−2πix}
        u[j] = std::f64::consts::SQRT_2;
        let d = coefficient_dump(&es, &u).unwrap();
        assert_eq!(d.entries.len(), es.len());
        assert_eq!(d.entries[j].k, vec![1]);
        assert!((d.entries[j].re - 1.0).abs() < 1e-15 && d.entries[j].im == 0.0);
        let json = serde_json::to_value(&d).unwrap();
        assert_eq!(json["subspace"], "full");
        assert_eq!(json["K"], 3);
    }

    #[test]
    fn field_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ForwardModel::navier_stokes(3, 0.5, 10, 0.1, &[]).unwrap();
        let mut th = vec![0.0; 6];
        th[0] = 0.4;
        th[3] = 0.2;
        let f = m.solve(&th).unwrap();
        let stem = dir.path().join("u");
        let h = write_field(&stem, &f, "ns").unwrap();
        assert_eq!(h.steps, 10);
        let (h2, g) = read_field(&stem).unwrap();
        assert_eq!(h, h2);
        assert_eq!(f, g);
        let mut bytes = fs::read(dir.path().join("u.bin")).unwrap();
        bytes[3] ^= 1;
        fs::write(dir.path().join("u.bin"), bytes).unwrap();
        assert!(read_field(&stem).is_err());
    }

    #[test]
    fn matrix_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64);
        let stem = dir.path().join("m");
        write_matrix(&stem, "test", &m).unwrap();
        let (h, back) = read_matrix(&stem).unwrap();
        assert_eq!((h.rows, h.cols), (3, 2));
        assert_eq!(m, back);
        let raw = fs::read(dir.path().join("m.bin")).unwrap();
        // row-major: second value is m[(0, 1)]
        assert_eq!(f64::from_le_bytes(raw[8..16].try_into().unwrap()), -0.5);
    }
}
