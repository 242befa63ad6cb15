//! Two-stage training: identity-loss pretraining, then alternating
//! per-epoch re-estimation of the hypothesis model and mini-batch descent
//! on the combined pair + identity loss with that model held fixed.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledInstance;
use crate::embedder::{backward, forward, sgd_step, EmbedderParams, SgdState};
use crate::error::{Error, Result};
use crate::loss::{glrtml_pair_loss, identity_loss, identity_loss_grad, pair_loss_grad_scores, LossConfig, PairBatch};
use crate::model::{fit_hypothesis_model, GlrtConfig, HypothesisModel, Scorer};
use crate::pairs::{pair_diffs, sample_pairs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs of identity-loss pretraining.
    pub t0: usize,
    /// Epochs of the alternating stage.
    pub t1_minus_t0: usize,
    pub batch_size: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Embedding dimension.
    pub d: usize,
    /// Width of both hidden layers.
    pub hidden: usize,
    /// Positive diffs drawn per model estimate.
    pub pos_budget: usize,
    /// Negative diffs drawn per model estimate.
    pub neg_budget: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            t0: 100,
            t1_minus_t0: 50,
            batch_size: 64,
            lr_stage1: 0.05,
            lr_stage2: 0.005,
            momentum: 0.9,
            weight_decay: 0.0005,
            d: 64,
            hidden: 64,
            pos_budget: 50_000,
            neg_budget: 50_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size < 2 {
            return bad("trainer batch_size must be at least 2");
        }
        if self.d == 0 || self.hidden == 0 {
            return bad("trainer d and hidden must be positive");
        }
        if !(self.lr_stage1 > 0.0 && self.lr_stage2 > 0.0) {
            return bad("trainer learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("trainer momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("trainer weight_decay must be nonnegative");
        }
        if self.pos_budget == 0 || self.neg_budget == 0 {
            return bad("trainer pair budgets must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "stage1")]
    Identity,
    #[serde(rename = "stage2")]
    Joint,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Global epoch number, counting from 1 across both stages.
    pub epoch: usize,
    pub stage: Stage,
    pub pair_loss: f64,
    pub id_loss: f64,
    pub total_loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub params: EmbedderParams,
    pub optimizer: SgdState,
    pub model: HypothesisModel,
}

/// Hooks invoked during training.
pub trait TrainObserver {
    /// The model estimated at the start of a stage-2 epoch (`epoch` counts
    /// stage-2 epochs from 0), or the final model (`epoch` equal to the
    /// number of stage-2 epochs).
    fn epoch_model(&mut self, _epoch: usize, _model: &HypothesisModel) {}
    /// A stage-2 batch step and the model it was scored with.
    fn batch(&mut self, _epoch: usize, _model: &HypothesisModel, _loss: &BatchLoss) {}
    fn epoch_end(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub pair: f64,
    pub identity: f64,
    pub total: f64,
}

/// Mixes a stream id into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_ESTIMATE: u64 = 3;

/// Labeled (non-distractor) training instances.
pub fn labeled_only(train: &[LabeledInstance]) -> Vec<&LabeledInstance> {
    train.iter().filter(|i| !i.is_distractor()).collect()
}

fn num_classes(train: &[&LabeledInstance]) -> Result<usize> {
    let mut labels: Vec<i64> = train.iter().map(|i| i.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "training needs at least 2 classes, found {}",
            labels.len()
        )));
    }
    if labels[0] < 0 {
        return Err(Error::InvalidLabel {
            label: labels[0],
            classes: labels.len(),
        });
    }
    Ok(*labels.last().unwrap() as usize + 1)
}

/// Loss and parameter gradient on one batch. With `scorer` absent only the
/// identity loss is used; otherwise the pair loss over all in-batch pairs is
/// added with the identity term weighted by `loss.alpha`.
pub fn batch_loss_and_grad(
    params: &EmbedderParams,
    scorer: Option<&Scorer>,
    inputs: &[&[f64]],
    labels: &[i64],
    loss: &LossConfig,
) -> Result<(BatchLoss, EmbedderParams)> {
    let traces = inputs.iter().map(|x| forward(params, x)).collect::<Result<Vec<_>>>()?;
    let log_probs: Vec<Vec<f64>> = traces.iter().map(|t| t.log_probs.clone()).collect();
    let id = identity_loss(&log_probs, labels)?;
    let alpha = if scorer.is_some() { loss.alpha } else { 1.0 };
    let mut g_lp = identity_loss_grad(&log_probs, labels)?;
    for row in &mut g_lp {
        for g in row.iter_mut() {
            *g *= alpha;
        }
    }
    let mut g_emb = vec![vec![0.0; params.embedding_dim()]; inputs.len()];

    let mut pair = 0.0;
    if let Some(scorer) = scorer {
        let batch = PairBatch::from_labels(labels);
        let diff = |&(i, j): &(usize, usize)| -> Vec<f64> {
            traces[i].embedding.iter().zip(&traces[j].embedding).map(|(a, b)| a - b).collect()
        };
        let pos_diffs: Vec<Vec<f64>> = batch.pos_pairs.iter().map(diff).collect();
        let neg_diffs: Vec<Vec<f64>> = batch.neg_pairs.iter().map(diff).collect();
        let sp = pos_diffs.iter().map(|x| scorer.score(x)).collect::<Result<Vec<_>>>()?;
        let sn = neg_diffs.iter().map(|x| scorer.score(x)).collect::<Result<Vec<_>>>()?;
        pair = glrtml_pair_loss(&sp, &sn, loss.nu);
        let (gp, gn) = pair_loss_grad_scores(&sp, &sn, loss.nu);
        let pairs = batch.pos_pairs.iter().zip(&pos_diffs).zip(gp).chain(batch.neg_pairs.iter().zip(&neg_diffs).zip(gn));
        for ((&(i, j), x), gs) in pairs {
            if gs == 0.0 {
                continue;
            }
            let g = scorer.grad(x)?;
            for (k, gk) in g.iter().enumerate() {
                g_emb[i][k] += gs * gk;
                g_emb[j][k] -= gs * gk;
            }
        }
    }
    let grads = backward(params, &traces, &g_emb, &g_lp)?;
    Ok((
        BatchLoss {
            pair,
            identity: id,
            total: pair + alpha * id,
        },
        grads,
    ))
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    params: &mut EmbedderParams,
    state: &mut SgdState,
    train: &[&LabeledInstance],
    scorer: Option<(&Scorer, &HypothesisModel)>,
    lr: f64,
    cfg: &TrainConfig,
    loss: &LossConfig,
    rng: &mut ChaCha8Rng,
    stage2_epoch: usize,
    observer: &mut dyn TrainObserver,
) -> Result<(f64, f64, f64)> {
    let mut sums = (0.0, 0.0, 0.0);
    let list = batches(train.len(), cfg.batch_size, rng);
    for batch in &list {
        let inputs: Vec<&[f64]> = batch.iter().map(|&i| train[i].features.as_slice()).collect();
        let labels: Vec<i64> = batch.iter().map(|&i| train[i].label).collect();
        let (bl, grads) = batch_loss_and_grad(params, scorer.map(|s| s.0), &inputs, &labels, loss)?;
        if let Some((_, model)) = scorer {
            observer.batch(stage2_epoch, model, &bl);
        }
        sgd_step(params, &grads, lr, cfg.momentum, cfg.weight_decay, state)?;
        sums.0 += bl.pair;
        sums.1 += bl.identity;
        sums.2 += bl.total;
    }
    let n = list.len().max(1) as f64;
    if !params.slices().iter().all(|s| s.iter().all(|v| v.is_finite())) {
        return Err(Error::NonConvergence { sweeps: stage2_epoch });
    }
    Ok((sums.0 / n, sums.1 / n, sums.2 / n))
}

/// Identity-loss pretraining for `cfg.t0` epochs from a seeded
/// initialization.
pub fn train_stage1(
    train: &[LabeledInstance],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(EmbedderParams, SgdState, Vec<EpochRecord>)> {
    cfg.validate()?;
    let labeled = labeled_only(train);
    let classes = num_classes(&labeled)?;
    let d_in = labeled[0].features.len();
    let mut params = EmbedderParams::init(d_in, cfg.hidden, cfg.d, classes, derive_seed(cfg.seed, STREAM_INIT))?;
    let mut state = SgdState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE));
    let mut records = Vec::with_capacity(cfg.t0);
    let loss = LossConfig::default();
    for epoch in 0..cfg.t0 {
        let start = Instant::now();
        let (pair, id, total) = run_epoch(
            &mut params,
            &mut state,
            &labeled,
            None,
            cfg.lr_stage1,
            cfg,
            &loss,
            &mut rng,
            0,
            observer,
        )?;
        let record = EpochRecord {
            epoch: epoch + 1,
            stage: Stage::Identity,
            pair_loss: pair,
            id_loss: id,
            total_loss: total,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observer.epoch_end(&record);
        records.push(record);
    }
    Ok((params, state, records))
}

/// Embeds the labeled training set, samples positive and negative diffs
/// within the budgets and fits the hypothesis model.
pub fn estimate_epoch_model(
    params: &EmbedderParams,
    train: &[LabeledInstance],
    cfg: &TrainConfig,
    glrt: &GlrtConfig,
    seed: u64,
) -> Result<HypothesisModel> {
    let labeled = labeled_only(train);
    let inputs: Vec<&[f64]> = labeled.iter().map(|i| i.features.as_slice()).collect();
    let labels: Vec<i64> = labeled.iter().map(|i| i.label).collect();
    let embeddings = params.embed_all(&inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = sample_pairs(&labels, cfg.pos_budget, cfg.neg_budget, &mut rng);
    let pos = pair_diffs(&embeddings, &sample.positives);
    let neg = pair_diffs(&embeddings, &sample.negatives);
    fit_hypothesis_model(&pos, &neg, glrt, seed)
}

/// Alternating stage: at the start of every epoch the model is re-estimated
/// and then held fixed for all batches of that epoch; one more estimate
/// follows the last epoch. Momentum restarts from zero.
#[allow(clippy::too_many_arguments)]
pub fn train_stage2(
    mut params: EmbedderParams,
    mut state: SgdState,
    train: &[LabeledInstance],
    cfg: &TrainConfig,
    glrt: &GlrtConfig,
    loss: &LossConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    cfg.validate()?;
    glrt.validate()?;
    loss.validate()?;
    let labeled = labeled_only(train);
    num_classes(&labeled)?;
    state.reset();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE ^ 0xA5A5));
    let estimate_seed = |epoch: usize| derive_seed(cfg.seed, STREAM_ESTIMATE + ((epoch as u64) << 8));
    let mut records = Vec::with_capacity(cfg.t1_minus_t0);
    for epoch in 0..cfg.t1_minus_t0 {
        let start = Instant::now();
        let model = estimate_epoch_model(&params, train, cfg, glrt, estimate_seed(epoch))?;
        observer.epoch_model(epoch, &model);
        let scorer = model.scorer()?;
        let (pair, id, total) = run_epoch(
            &mut params,
            &mut state,
            &labeled,
            Some((&scorer, &model)),
            cfg.lr_stage2,
            cfg,
            loss,
            &mut rng,
            epoch,
            observer,
        )?;
        let record = EpochRecord {
            epoch: cfg.t0 + epoch + 1,
            stage: Stage::Joint,
            pair_loss: pair,
            id_loss: id,
            total_loss: total,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observer.epoch_end(&record);
        records.push(record);
    }
    let model = estimate_epoch_model(&params, train, cfg, glrt, estimate_seed(cfg.t1_minus_t0))?;
    observer.epoch_model(cfg.t1_minus_t0, &model);
    Ok(TrainReport {
        epochs: records,
        params,
        optimizer: state,
        model,
    })
}

/// Both stages end to end.
pub fn train(
    train: &[LabeledInstance],
    cfg: &TrainConfig,
    glrt: &GlrtConfig,
    loss: &LossConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    let (params, state, mut records) = train_stage1(train, cfg, observer)?;
    let mut report = train_stage2(params, state, train, cfg, glrt, loss, observer)?;
    records.append(&mut report.epochs);
    report.epochs = records;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig};

    fn toy_train(seed: u64) -> Vec<LabeledInstance> {
        let cfg = SynthConfig {
            num_classes: 4,
            per_class: 40,
            d_in: 6,
            class_sep: 6.0,
            anisotropy: 4.0,
            seed,
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg).unwrap().source.train
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { t0: 3, t1_minus_t0: 2, d: 4, hidden: 8, batch_size: 16, ..TrainConfig::default() }
    }

    #[test]
    fn stage1_zero_epochs_is_init() {
        let train = toy_train(1);
        let cfg = TrainConfig { t0: 0, ..small_cfg() };
        let (p, _, rec) = train_stage1(&train, &cfg, &mut ()).unwrap();
        let init = EmbedderParams::init(6, 8, 4, 4, derive_seed(cfg.seed, STREAM_INIT)).unwrap();
        assert_eq!(p, init);
        assert!(rec.is_empty());
    }

    #[test]
    fn stage2_zero_epochs_estimates_once() {
        struct Count(usize);
        impl TrainObserver for Count {
            fn epoch_model(&mut self, _: usize, _: &HypothesisModel) {
                self.0 += 1;
            }
        }
        let train = toy_train(2);
        let cfg = TrainConfig { t1_minus_t0: 0, ..small_cfg() };
        let (p, s, _) = train_stage1(&train, &cfg, &mut ()).unwrap();
        let mut count = Count(0);
        let report = train_stage2(p.clone(), s, &train, &cfg, &GlrtConfig::default(), &LossConfig::default(), &mut count).unwrap();
        assert_eq!(report.params, p);
        assert_eq!(count.0, 1);
    }

    #[test]
    fn training_is_deterministic() {
        let train = toy_train(3);
        let cfg = small_cfg();
        let a = super::train(&train, &cfg, &GlrtConfig::default(), &LossConfig::default(), &mut ()).unwrap();
        let b = super::train(&train, &cfg, &GlrtConfig::default(), &LossConfig::default(), &mut ()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.model, b.model);
        assert_eq!(a.epochs.len(), cfg.t0 + cfg.t1_minus_t0);
        for (x, y) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!((x.pair_loss, x.id_loss, x.total_loss), (y.pair_loss, y.id_loss, y.total_loss));
        }
    }

    #[test]
    fn estimate_counts_pairs_of_tiny_set() {
        let mk = |id: &str, label: i64, f: f64| LabeledInstance { id: id.into(), label, features: vec![f, -f] };
        let train = vec![mk("a", 0, 0.0), mk("b", 0, 1.0), mk("c", 1, 2.0), mk("d", 1, 4.0)];
        let labels: Vec<i64> = train.iter().map(|i| i.label).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_pairs(&labels, 100, 100, &mut rng);
        assert_eq!((s.positives.len(), s.negatives.len()), (2, 4));
        let cfg = TrainConfig { d: 2, hidden: 3, ..small_cfg() };
        let params = EmbedderParams::init(2, 3, 2, 2, 0).unwrap();
        let a = estimate_epoch_model(&params, &train, &cfg, &GlrtConfig::default(), 5).unwrap();
        assert_eq!(a, estimate_epoch_model(&params, &train, &cfg, &GlrtConfig::default(), 5).unwrap());
    }

    #[test]
    fn collapsed_embeddings_give_finite_model() {
        let train = toy_train(4);
        let cfg = small_cfg();
        let params = EmbedderParams::zeros(6, 8, 4, 4);
        let model = estimate_epoch_model(&params, &train, &cfg, &GlrtConfig::default(), 0).unwrap();
        let HypothesisModel::Mg(m) = model else { unreachable!() };
        assert!(m.form.as_slice().iter().all(|v| v.is_finite()));
        assert_eq!(m.sigma1.get(0, 1), 0.0);
        assert!(m.sigma1.get(0, 0) > 0.0);
    }

    #[test]
    fn rejects_single_class() {
        let mut train = toy_train(5);
        for t in &mut train {
            t.label = 0;
        }
        assert!(matches!(train_stage1(&train, &small_cfg(), &mut ()), Err(Error::InvalidConfig(_))));
    }
}
