//! Dense symmetric linear algebra and stable scalar reductions.
//!
//! Matrices are small (embedding dimension, typically 8 to 256), so
//! everything is stored dense and row-major. The eigen solver is cyclic
//! Jacobi, which is slow asymptotically but robust and accurate at these
//! sizes.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Pivots at or below this value make [`cholesky_inverse`] fail.
pub const CHOLESKY_PIVOT_FLOOR: f64 = 1e-12;

/// Jacobi stops once the off-diagonal Frobenius norm drops below this
/// fraction of the input's Frobenius norm.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Square symmetric matrix, dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = scale;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = Self::zeros(dim);
        for (i, &v) in diag.iter().enumerate() {
            m.entries[i * dim + i] = v;
        }
        m
    }

    /// Builds a matrix from rows, rejecting non-square or asymmetric input
    /// (relative tolerance 1e-12).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in &rows {
            check_dim(dim, row.len())?;
            entries.extend_from_slice(row);
        }
        let m = SymMatrix { dim, entries };
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (m.get(i, j) - m.get(j, i)).abs() > 1e-12 * scale {
                    return Err(Error::InvalidConfig(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(m.symmetrized())
    }

    /// Wraps a row-major buffer, averaging it with its transpose.
    pub fn from_row_major(dim: usize, entries: Vec<f64>) -> Result<Self> {
        check_dim(dim * dim, entries.len())?;
        Ok(SymMatrix { dim, entries }.symmetrized())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Sets `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.entries[i * self.dim + j] = value;
        self.entries[j * self.dim + i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SymMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Adds `value` to every diagonal entry.
    pub fn add_ridge(&self, value: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.entries[i * self.dim + i] += value;
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok((0..self.dim).map(|i| dot(self.row(i), x)).collect())
    }

    /// `self * other` for two symmetric matrices; the product is not
    /// symmetric in general so it is returned row-major.
    pub fn mul_mat(&self, other: &SymMatrix) -> Result<Vec<f64>> {
        check_dim(self.dim, other.dim)?;
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// Relative Frobenius distance `‖self − other‖ / max(‖other‖, tiny)`.
    pub fn relative_distance(&self, other: &SymMatrix) -> f64 {
        let diff: f64 = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / other.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    fn zip_with(&self, other: &SymMatrix, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        Ok(SymMatrix {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn symmetrized(mut self) -> Self {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.entries[i * n + j] + self.entries[j * n + i]);
                self.entries[i * n + j] = v;
                self.entries[j * n + i] = v;
            }
        }
        self
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(rows)
    }
}

/// Eigenvalues sorted descending with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Row-major `dim × dim`; column `k` is the eigenvector of
    /// `eigenvalues[k]`.
    pub eigenvectors: Vec<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.eigenvectors[i * n + k]).collect()
    }

    /// `V · diag(values) · Vᵀ`.
    pub fn reconstruct_with(&self, values: &[f64]) -> SymMatrix {
        let n = self.dim();
        let v = &self.eigenvectors;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for (k, &lambda) in values.iter().enumerate() {
                    acc += v[i * n + k] * lambda * v[j * n + k];
                }
                out[i * n + j] = acc;
                out[j * n + i] = acc;
            }
        }
        SymMatrix { dim: n, entries: out }
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(&self.eigenvalues)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    ForcePositiveDefinite,
    #[default]
    ForceNegativeDefinite,
    NoClip,
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub fn cholesky_inverse(m: &SymMatrix) -> Result<(SymMatrix, f64)> {
    let lower = cholesky(m)?;
    let n = m.dim();
    let log_det = 2.0 * (0..n).map(|i| lower[i * n + i].ln()).sum::<f64>();

    // Invert L (lower triangular), then inverse = L⁻ᵀ L⁻¹.
    let mut linv = vec![0.0; n * n];
    for col in 0..n {
        linv[col * n + col] = 1.0 / lower[col * n + col];
        for row in (col + 1)..n {
            let mut acc = 0.0;
            for k in col..row {
                acc -= lower[row * n + k] * linv[k * n + col];
            }
            linv[row * n + col] = acc / lower[row * n + row];
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in j..n {
                acc += linv[k * n + i] * linv[k * n + j];
            }
            inv[i * n + j] = acc;
            inv[j * n + i] = acc;
        }
    }
    Ok((SymMatrix { dim: n, entries: inv }, log_det))
}

/// Lower Cholesky factor, row-major.
pub fn cholesky(m: &SymMatrix) -> Result<Vec<f64>> {
    let n = m.dim();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut pivot = m.get(j, j);
        for k in 0..j {
            pivot -= l[j * n + k] * l[j * n + k];
        }
        if !(pivot > CHOLESKY_PIVOT_FLOOR) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let root = pivot.sqrt();
        l[j * n + j] = root;
        for i in (j + 1)..n {
            let mut acc = m.get(i, j);
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = acc / root;
        }
    }
    Ok(l)
}

/// Cyclic Jacobi eigen-decomposition.
pub fn sym_eigen(m: &SymMatrix) -> Result<EigenDecomposition> {
    let n = m.dim();
    let mut a = m.entries.clone();
    let mut v = SymMatrix::identity(n).entries;
    let target = JACOBI_TOLERANCE * m.frobenius_norm();

    let off_norm = |a: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[i * n + j] * a[i * n + j];
                }
            }
        }
        acc.sqrt()
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&a) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_norm(&a) > target {
        return Err(Error::NonConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[row * n + dst] = v[row * n + src];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Clamps the spectrum of `m` so it satisfies `mode`, keeping eigenvectors.
pub fn clip_spectrum(m: &SymMatrix, mode: ClipMode, eps: f64) -> Result<SymMatrix> {
    let clamp: fn(f64, f64) -> f64 = match mode {
        ClipMode::NoClip => return Ok(m.clone()),
        ClipMode::ForcePositiveDefinite => |l, eps| l.max(eps),
        ClipMode::ForceNegativeDefinite => |l, eps| l.min(-eps),
    };
    let eig = sym_eigen(m)?;
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| clamp(l, eps)).collect();
    Ok(eig.reconstruct_with(&clipped))
}

/// Eigenvalue floor: the matrix with every eigenvalue raised to at least
/// `floor`.
pub fn floor_spectrum(m: &SymMatrix, floor: f64) -> Result<SymMatrix> {
    let eig = sym_eigen(m)?;
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return Ok(m.clone());
    }
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(floor)).collect();
    Ok(eig.reconstruct_with(&clipped))
}

/// `ln Σ exp(v_i)`, shifted by the maximum.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `xᵀ m x`.
pub fn quadratic_form(m: &SymMatrix, x: &[f64]) -> Result<f64> {
    check_dim(m.dim(), x.len())?;
    Ok(quadratic_form_unchecked(m, x))
}

#[inline]
pub(crate) fn quadratic_form_unchecked(m: &SymMatrix, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        acc += xi * dot(m.row(i), x);
    }
    acc
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
