//! Multivariate-Gaussian likelihood-ratio scoring of differential embeddings.
//!
//! Both hypotheses (paired / unpaired) are modelled as zero-mean Gaussians
//! over `x_i − x_j`. The score used for ranking is the quadratic form
//! `xᵀ(Σ̂0⁻¹ − Σ̂1⁻¹)x`, which drops the factor ½ and the log-determinant
//! constant of the exact log-likelihood ratio; [`mg_full_llr`] keeps both.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{cholesky_inverse, clip_spectrum, quadratic_form, ClipMode, SymMatrix};

/// Smallest ridge ever added, so fully collapsed embeddings still give a
/// finite model.
pub const MIN_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// H1: both embeddings come from the same object.
    Paired,
    /// H0: different objects.
    Unpaired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffEmbedding {
    pub vector: Vec<f64>,
    pub hypothesis: Hypothesis,
}

impl DiffEmbedding {
    pub fn between(a: &[f64], b: &[f64], hypothesis: Hypothesis) -> Self {
        DiffEmbedding {
            vector: a.iter().zip(b).map(|(x, y)| x - y).collect(),
            hypothesis,
        }
    }

    /// The same pair taken in the opposite order.
    pub fn negated(&self) -> Self {
        DiffEmbedding {
            vector: self.vector.iter().map(|v| -v).collect(),
            hypothesis: self.hypothesis,
        }
    }
}

impl AsRef<[f64]> for DiffEmbedding {
    fn as_ref(&self) -> &[f64] {
        &self.vector
    }
}

/// Zero-mean maximum-likelihood covariance `(1/N) Σ x xᵀ`, plus `ridge·I`.
pub fn estimate_cov<V: AsRef<[f64]>>(diffs: &[V], ridge: f64) -> Result<SymMatrix> {
    let first = diffs.first().ok_or(Error::EmptyInput("no differential embeddings"))?;
    let d = first.as_ref().len();
    let mut acc = vec![0.0; d * d];
    for x in diffs {
        let x = x.as_ref();
        check_dim(d, x.len())?;
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let row = &mut acc[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += xi * x[j];
            }
        }
    }
    let n = diffs.len() as f64;
    let mut cov = SymMatrix::zeros(d);
    for i in 0..d {
        for j in i..d {
            cov.set(i, j, acc[i * d + j] / n);
        }
    }
    Ok(cov.add_ridge(ridge))
}

/// Scale-free ridge `scale · trace(Σ̂)/d`, never below [`MIN_RIDGE`].
pub fn scaled_ridge(raw_cov: &SymMatrix, scale: f64) -> f64 {
    let d = raw_cov.dim().max(1) as f64;
    (scale * raw_cov.trace() / d).max(MIN_RIDGE)
}

/// Estimates a covariance with the trace-scaled ridge applied. Returns the
/// regularized matrix and the ridge used.
pub fn estimate_cov_scaled<V: AsRef<[f64]>>(diffs: &[V], ridge_scale: f64) -> Result<(SymMatrix, f64)> {
    let raw = estimate_cov(diffs, 0.0)?;
    let ridge = scaled_ridge(&raw, ridge_scale);
    Ok((raw.add_ridge(ridge), ridge))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgSettings {
    pub clip_mode: ClipMode,
    pub clip_eps: f64,
    /// Ridge as a fraction of `trace(Σ̂)/d`.
    pub ridge_scale: f64,
}

impl Default for MgSettings {
    fn default() -> Self {
        MgSettings {
            clip_mode: ClipMode::default(),
            clip_eps: 1e-6,
            ridge_scale: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgModel {
    pub sigma1: SymMatrix,
    pub sigma0: SymMatrix,
    /// Clipped `Σ̂0⁻¹ − Σ̂1⁻¹`.
    pub form: SymMatrix,
    pub clip_mode: ClipMode,
    pub clip_eps: f64,
    /// Ridge that was added to the covariance estimates (0 if the caller
    /// supplied regularized matrices directly).
    pub ridge: f64,
}

impl MgModel {
    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    /// Free entries of the two symmetric covariances: `d(d+1)`.
    pub fn covariance_parameter_count(&self) -> usize {
        let d = self.dim();
        d * (d + 1)
    }

    /// Entries of the form matrix: `d²`.
    pub fn form_parameter_count(&self) -> usize {
        self.dim() * self.dim()
    }
}

pub fn build_mg_model(
    sigma1: SymMatrix,
    sigma0: SymMatrix,
    clip_mode: ClipMode,
    clip_eps: f64,
) -> Result<MgModel> {
    check_dim(sigma1.dim(), sigma0.dim())?;
    let (inv1, _) = cholesky_inverse(&sigma1)?;
    let (inv0, _) = cholesky_inverse(&sigma0)?;
    let form = clip_spectrum(&inv0.sub(&inv1)?, clip_mode, clip_eps)?;
    Ok(MgModel {
        sigma1,
        sigma0,
        form,
        clip_mode,
        clip_eps,
        ridge: 0.0,
    })
}

/// Estimates both covariances from labelled diffs and builds the model.
pub fn fit_mg<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    positives: &[P],
    negatives: &[N],
    settings: &MgSettings,
) -> Result<MgModel> {
    let raw1 = estimate_cov(positives, 0.0)?;
    let raw0 = estimate_cov(negatives, 0.0)?;
    let ridge = scaled_ridge(&raw1, settings.ridge_scale).max(scaled_ridge(&raw0, settings.ridge_scale));
    let mut model = build_mg_model(
        raw1.add_ridge(ridge),
        raw0.add_ridge(ridge),
        settings.clip_mode,
        settings.clip_eps,
    )?;
    model.ridge = ridge;
    Ok(model)
}

pub fn mg_score(model: &MgModel, diff: &[f64]) -> Result<f64> {
    quadratic_form(&model.form, diff)
}

/// Exact zero-mean Gaussian log-likelihood ratio
/// `½xᵀΣ0⁻¹x − ½xᵀΣ1⁻¹x + ½(log|Σ0| − log|Σ1|)`.
pub fn mg_full_llr(sigma1: &SymMatrix, sigma0: &SymMatrix, diff: &[f64]) -> Result<f64> {
    MgLlr::new(sigma1, sigma0)?.evaluate(diff)
}

/// [`mg_full_llr`] with the inverses computed once.
#[derive(Debug, Clone)]
pub struct MgLlr {
    inv1: SymMatrix,
    inv0: SymMatrix,
    half_log_det_gap: f64,
}

impl MgLlr {
    pub fn new(sigma1: &SymMatrix, sigma0: &SymMatrix) -> Result<Self> {
        check_dim(sigma1.dim(), sigma0.dim())?;
        let (inv1, log_det1) = cholesky_inverse(sigma1)?;
        let (inv0, log_det0) = cholesky_inverse(sigma0)?;
        Ok(MgLlr {
            inv1,
            inv0,
            half_log_det_gap: 0.5 * (log_det0 - log_det1),
        })
    }

    pub fn evaluate(&self, diff: &[f64]) -> Result<f64> {
        let q0 = quadratic_form(&self.inv0, diff)?;
        let q1 = quadratic_form(&self.inv1, diff)?;
        Ok(0.5 * q0 - 0.5 * q1 + self.half_log_det_gap)
    }
}
