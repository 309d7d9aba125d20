//! Binary matrix files: little-endian `f32`, row-major, with a JSON sidecar
//! (`<name>.json`) carrying `{rows, cols, dtype, role}`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type MatrixF32 = Array2<f32>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub role: String,
}

/// Sidecar path for a matrix file: `x.f32` -> `x.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_matrix(path: &Path, matrix: &MatrixF32, role: &str) -> Result<()> {
    let meta = MatrixMeta {
        rows: matrix.nrows(),
        cols: matrix.ncols(),
        dtype: "f32".to_string(),
        role: role.to_string(),
    };
    let mut bytes = Vec::with_capacity(matrix.len() * 4);
    // `iter()` walks in logical row-major order regardless of memory layout.
    for v in matrix.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&sidecar, json + "\n").map_err(|e| Error::io(&sidecar, e))?;
    Ok(())
}

pub fn read_matrix_meta(path: &Path) -> Result<MatrixMeta> {
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: MatrixMeta = serde_json::from_str(&text)?;
    if meta.dtype != "f32" {
        return Err(Error::format(&sidecar, format!("unsupported dtype `{}`", meta.dtype)));
    }
    Ok(meta)
}

/// Reads a matrix and validates its size against the sidecar and that every
/// value is finite.
pub fn read_matrix(path: &Path) -> Result<(MatrixF32, MatrixMeta)> {
    let meta = read_matrix_meta(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = meta
        .rows
        .checked_mul(meta.cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "matrix size overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes for {}x{} f32, found {}",
                meta.rows,
                meta.cols,
                bytes.len()
            ),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-finite value at row {}, col {}", pos / meta.cols.max(1), pos % meta.cols.max(1)),
        ));
    }
    let matrix = Array2::from_shape_vec((meta.rows, meta.cols), data)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((matrix, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.f32");
        let m = Array2::from_shape_vec((2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        write_matrix(&path, &m, "test").unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..12]).unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.f32");
        let m = Array2::from_shape_vec((1, 3), vec![1.0f32, f32::NAN, 3.0]).unwrap();
        write_matrix(&path, &m, "test").unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn layout_is_little_endian_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.f32");
        // Column-major input must still serialize row by row.
        let m = Array2::from_shape_vec((2, 3), vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap()
            .reversed_axes()
            .as_standard_layout()
            .reversed_axes()
            .to_owned();
        write_matrix(&path, &m, "x").unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[4..8], &2.0f32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4.0f32.to_le_bytes());
        let meta = read_matrix_meta(&path).unwrap();
        assert_eq!((meta.rows, meta.cols, meta.dtype.as_str()), (2, 3, "f32"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..rows * cols)
                .map(|_| f32::from_bits(rng.gen::<u32>() & 0xbf7f_ffff))
                .collect();
            let m = Array2::from_shape_vec((rows, cols), data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.f32");
            write_matrix(&path, &m, "prop").unwrap();
            let (back, meta) = read_matrix(&path).unwrap();
            prop_assert_eq!(meta.role, "prop");
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.iter().zip(m.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
