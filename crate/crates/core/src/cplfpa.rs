//! Fast parameter adaptation to an unlabeled target domain: cluster the
//! target embeddings, treat cluster ids as pseudo-labels, and re-estimate
//! the hypothesis model from pseudo-labeled pairs. The embedder is never
//! modified.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::EmbedderParams;
use crate::error::{check_dim, Error, Result};
use crate::glrt_gmm::{fit_symmetric_gmm, GmmParams};
use crate::glrt_mg::{fit_mg, Hypothesis, MgModel, MgSettings};
use crate::model::{GlrtConfig, GlrtVariant, HypothesisModel};
use crate::pairs::{pair_diffs, sample_pairs};
use crate::trainer::derive_seed;

pub use crate::kmeans::{kmeans, kmeans_plus_plus, PseudoLabeling, KMEANS_MAX_ITERS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    /// Number of k-means clusters.
    pub k: usize,
    pub pos_budget: usize,
    pub neg_budget: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            k: 16,
            pos_budget: 20_000,
            neg_budget: 20_000,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("adapt k must be at least 2".into()));
        }
        if self.pos_budget == 0 || self.neg_budget == 0 {
            return Err(Error::InvalidConfig("adapt pair budgets must be positive".into()));
        }
        Ok(())
    }

    fn pair_seed(&self) -> u64 {
        derive_seed(self.seed, 0x5041_4952)
    }

    fn cluster_seed(&self) -> u64 {
        derive_seed(self.seed, 0x4b4d_4541)
    }

    fn em_seed(&self) -> u64 {
        derive_seed(self.seed, 0x454d)
    }
}

/// Positive and negative diffs drawn according to the pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPairs {
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub available_positives: usize,
    pub available_negatives: usize,
}

pub fn build_pseudo_pairs(embeddings: &[Vec<f64>], labeling: &PseudoLabeling, cfg: &AdaptConfig) -> Result<PseudoPairs> {
    check_dim(embeddings.len(), labeling.assignments.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.pair_seed());
    let sample = sample_pairs(&labeling.assignments, cfg.pos_budget, cfg.neg_budget, &mut rng);
    if sample.available_positives == 0 {
        return Err(Error::NoPositivePairs);
    }
    if sample.available_negatives == 0 {
        return Err(Error::NoNegativePairs);
    }
    Ok(PseudoPairs {
        positives: pair_diffs(embeddings, &sample.positives),
        negatives: pair_diffs(embeddings, &sample.negatives),
        available_positives: sample.available_positives,
        available_negatives: sample.available_negatives,
    })
}

pub fn adapt_mg(embeddings: &[Vec<f64>], labeling: &PseudoLabeling, cfg: &AdaptConfig, settings: &MgSettings) -> Result<MgModel> {
    let pairs = build_pseudo_pairs(embeddings, labeling, cfg)?;
    fit_mg(&pairs.positives, &pairs.negatives, settings)
}

/// Mixture models (paired, unpaired) fitted on the symmetrized pseudo-pair
/// diffs.
pub fn adapt_gmm(
    embeddings: &[Vec<f64>],
    labeling: &PseudoLabeling,
    cfg: &AdaptConfig,
    glrt: &GlrtConfig,
) -> Result<(GmmParams, GmmParams)> {
    let pairs = build_pseudo_pairs(embeddings, labeling, cfg)?;
    fit_gmm_pair(&pairs, cfg, glrt)
}

fn fit_gmm_pair(pairs: &PseudoPairs, cfg: &AdaptConfig, glrt: &GlrtConfig) -> Result<(GmmParams, GmmParams)> {
    let seed = cfg.em_seed();
    let (paired, _) = fit_symmetric_gmm(&pairs.positives, Hypothesis::Paired, &glrt.em_config(glrt.k1, seed))?;
    let (unpaired, _) = fit_symmetric_gmm(
        &pairs.negatives,
        Hypothesis::Unpaired,
        &glrt.em_config(glrt.k0, seed.wrapping_add(1)),
    )?;
    Ok((paired, unpaired))
}

/// Wall-clock per phase, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptTiming {
    pub embed_ms: f64,
    pub clustering_ms: f64,
    pub diff_ms: f64,
    pub update_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub model: HypothesisModel,
    pub labeling: PseudoLabeling,
    pub timing: AdaptTiming,
    pub positives_used: usize,
    pub negatives_used: usize,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Embeds the target inputs, clusters them, builds pseudo-pairs and
/// re-estimates the configured hypothesis model.
pub fn adapt<V: AsRef<[f64]>>(
    params: &EmbedderParams,
    target: &[V],
    cfg: &AdaptConfig,
    glrt: &GlrtConfig,
) -> Result<Adaptation> {
    cfg.validate()?;
    glrt.validate()?;
    let start = Instant::now();
    let embeddings = params.embed_all(target)?;
    let embed_ms = elapsed_ms(start);

    let t = Instant::now();
    let labeling = kmeans(&embeddings, cfg.k, cfg.cluster_seed())?;
    let clustering_ms = elapsed_ms(t);

    let t = Instant::now();
    let pairs = build_pseudo_pairs(&embeddings, &labeling, cfg)?;
    let diff_ms = elapsed_ms(t);

    let t = Instant::now();
    let model = match glrt.variant {
        GlrtVariant::Mg => HypothesisModel::Mg(fit_mg(&pairs.positives, &pairs.negatives, &glrt.mg_settings())?),
        GlrtVariant::Gmm => {
            let (paired, unpaired) = fit_gmm_pair(&pairs, cfg, glrt)?;
            HypothesisModel::Gmm { paired, unpaired }
        }
    };
    let update_ms = elapsed_ms(t);

    Ok(Adaptation {
        model,
        labeling,
        timing: AdaptTiming {
            embed_ms,
            clustering_ms,
            diff_ms,
            update_ms,
            total_ms: elapsed_ms(start),
        },
        positives_used: pairs.positives.len(),
        negatives_used: pairs.negatives.len(),
    })
}
