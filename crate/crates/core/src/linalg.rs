//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Max-abs norm of a matrix or vector slice.
pub fn inf_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `(x - c)^T W (x - c)`.
pub fn weighted_sq(x: &DVector<f64>, c: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    let d = x - c;
    (d.transpose() * w * &d)[(0, 0)]
}

/// Returns `[I_k, 0]` with `k` rows and `n` columns.
pub fn selector(k: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, n, |i, j| if i == j { 1.0 } else { 0.0 })
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Positive definiteness test through a Cholesky attempt plus an eigenvalue
/// floor, used for validating weights.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax())
        && m.clone().cholesky().is_some()
        && min_eigenvalue(m) > 0.0
}

pub fn check_square(m: &DMatrix<f64>, n: usize, name: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dim(format!(
            "{name} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn check_len(v: &DVector<f64>, n: usize, name: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::dim(format!(
            "{name} has length {}, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

/// Row-major nested-array view of a matrix.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Builds a matrix from row-major nested arrays. `ncols` is used for the
/// zero-row case, where the rows alone do not determine the width.
pub fn from_rows(rows: &[Vec<f64>], ncols: Option<usize>) -> Result<DMatrix<f64>> {
    let n = match rows.first() {
        Some(r) => r.len(),
        None => ncols.unwrap_or(0),
    };
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Malformed("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

/// Serde adaptor: matrices as row-major nested arrays.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows, None).map_err(serde::de::Error::custom)
    }
}

/// Serde adaptor: vectors as flat arrays.
pub mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
