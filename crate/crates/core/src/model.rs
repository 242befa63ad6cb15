//! The hypothesis model used for scoring: either the single-Gaussian form or
//! a pair of mixtures, plus the settings used to fit it.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::glrt_gmm::{fit_symmetric_gmm, EmConfig, GmmParams, PreparedGmm};
use crate::glrt_mg::{fit_mg, Hypothesis, MgModel, MgSettings};
use crate::numerics::{quadratic_form_unchecked, ClipMode, SymMatrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlrtVariant {
    #[default]
    Mg,
    Gmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlrtConfig {
    pub variant: GlrtVariant,
    pub clip_mode: ClipMode,
    pub clip_eps: f64,
    /// Covariance ridge as a fraction of `trace/d`.
    pub ridge_scale: f64,
    /// Components of the paired-hypothesis mixture.
    pub k1: usize,
    /// Components of the unpaired-hypothesis mixture.
    pub k0: usize,
    pub diagonal: bool,
    pub em_max_iters: usize,
    pub em_tol: f64,
    /// Eigenvalue floor for mixture covariances; absent means relative to
    /// the pooled trace.
    pub cov_floor: Option<f64>,
}

impl Default for GlrtConfig {
    fn default() -> Self {
        GlrtConfig {
            variant: GlrtVariant::Mg,
            clip_mode: ClipMode::default(),
            clip_eps: 1e-6,
            ridge_scale: 1e-4,
            k1: 1,
            k0: 1,
            diagonal: false,
            em_max_iters: 100,
            em_tol: 1e-6,
            cov_floor: None,
        }
    }
}

impl GlrtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k0 == 0 {
            return Err(Error::InvalidConfig("glrt k1 and k0 must be at least 1".into()));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::InvalidConfig("glrt clip_eps must be positive".into()));
        }
        if !(self.ridge_scale >= 0.0) {
            return Err(Error::InvalidConfig("glrt ridge_scale must be nonnegative".into()));
        }
        if !(self.em_tol >= 0.0) {
            return Err(Error::InvalidConfig("glrt em_tol must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn mg_settings(&self) -> MgSettings {
        MgSettings {
            clip_mode: self.clip_mode,
            clip_eps: self.clip_eps,
            ridge_scale: self.ridge_scale,
        }
    }

    pub fn em_config(&self, k: usize, seed: u64) -> EmConfig {
        EmConfig {
            k,
            seed,
            max_iters: self.em_max_iters,
            tol: self.em_tol,
            cov_floor: self.cov_floor,
            diagonal: self.diagonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum HypothesisModel {
    Mg(MgModel),
    Gmm { paired: GmmParams, unpaired: GmmParams },
}

impl HypothesisModel {
    pub fn dim(&self) -> usize {
        match self {
            HypothesisModel::Mg(m) => m.dim(),
            HypothesisModel::Gmm { paired, .. } => paired.dim(),
        }
    }

    pub fn variant(&self) -> GlrtVariant {
        match self {
            HypothesisModel::Mg(_) => GlrtVariant::Mg,
            HypothesisModel::Gmm { .. } => GlrtVariant::Gmm,
        }
    }

    /// Number of distribution parameters the model holds.
    pub fn parameter_count(&self) -> usize {
        match self {
            HypothesisModel::Mg(m) => m.covariance_parameter_count(),
            HypothesisModel::Gmm { paired, unpaired } => paired.parameter_count() + unpaired.parameter_count(),
        }
    }

    pub fn scorer(&self) -> Result<Scorer> {
        match self {
            HypothesisModel::Mg(m) => Ok(Scorer::Quadratic(m.form.clone())),
            HypothesisModel::Gmm { paired, unpaired } => {
                check_dim(paired.dim(), unpaired.dim())?;
                Ok(Scorer::Mixture {
                    paired: paired.prepare()?,
                    unpaired: unpaired.prepare()?,
                })
            }
        }
    }
}

/// A hypothesis model with inverses cached for repeated scoring.
#[derive(Debug, Clone)]
pub enum Scorer {
    /// `diffᵀ F diff`.
    Quadratic(SymMatrix),
    /// `log p(diff | paired) − log p(diff | unpaired)`.
    Mixture { paired: PreparedGmm, unpaired: PreparedGmm },
}

impl Scorer {
    pub fn dim(&self) -> usize {
        match self {
            Scorer::Quadratic(f) => f.dim(),
            Scorer::Mixture { paired, .. } => paired.dim(),
        }
    }

    pub fn score(&self, diff: &[f64]) -> Result<f64> {
        check_dim(self.dim(), diff.len())?;
        Ok(match self {
            Scorer::Quadratic(f) => quadratic_form_unchecked(f, diff),
            Scorer::Mixture { paired, unpaired } => paired.logpdf(diff)? - unpaired.logpdf(diff)?,
        })
    }

    /// Gradient of the score with respect to the diff.
    pub fn grad(&self, diff: &[f64]) -> Result<Vec<f64>> {
        match self {
            Scorer::Quadratic(f) => Ok(f.mul_vec(diff)?.into_iter().map(|v| 2.0 * v).collect()),
            Scorer::Mixture { paired, unpaired } => {
                let g1 = paired.grad_logpdf(diff)?;
                let g0 = unpaired.grad_logpdf(diff)?;
                Ok(g1.into_iter().zip(g0).map(|(a, b)| a - b).collect())
            }
        }
    }

    /// Gradients with respect to the two embeddings whose difference is
    /// `diff`.
    pub fn grad_embeddings(&self, diff: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = self.grad(diff)?;
        let neg = g.iter().map(|v| -v).collect();
        Ok((g, neg))
    }
}

/// Fits the configured hypothesis model from positive and negative diffs.
pub fn fit_hypothesis_model(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    cfg: &GlrtConfig,
    seed: u64,
) -> Result<HypothesisModel> {
    if positives.is_empty() {
        return Err(Error::NoPositivePairs);
    }
    if negatives.is_empty() {
        return Err(Error::NoNegativePairs);
    }
    match cfg.variant {
        GlrtVariant::Mg => Ok(HypothesisModel::Mg(fit_mg(positives, negatives, &cfg.mg_settings())?)),
        GlrtVariant::Gmm => {
            let (paired, _) = fit_symmetric_gmm(positives, Hypothesis::Paired, &cfg.em_config(cfg.k1, seed))?;
            let (unpaired, _) = fit_symmetric_gmm(
                negatives,
                Hypothesis::Unpaired,
                &cfg.em_config(cfg.k0, seed.wrapping_add(1)),
            )?;
            Ok(HypothesisModel::Gmm { paired, unpaired })
        }
    }
}
