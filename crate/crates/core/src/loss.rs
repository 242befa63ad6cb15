//! Pair loss over positive/negative similarity scores, identity
//! (classification) loss, and their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::glrt_mg::MgModel;
use crate::numerics::{log_sum_exp, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Temperature applied to every score.
    pub nu: f64,
    /// Weight of the identity loss.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { nu: 0.001, alpha: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidConfig(format!("loss nu must be positive, got {}", self.nu)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("loss alpha must be nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Index pairs of a batch, split by label agreement. Every pair is `(i, j)`
/// with `i < j`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairBatch {
    pub pos_pairs: Vec<(usize, usize)>,
    pub neg_pairs: Vec<(usize, usize)>,
}

impl PairBatch {
    /// All unordered pairs of the batch: equal labels are positives,
    /// different labels negatives.
    pub fn from_labels(labels: &[i64]) -> Self {
        let mut batch = PairBatch::default();
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                if labels[i] == labels[j] {
                    batch.pos_pairs.push((i, j));
                } else {
                    batch.neg_pairs.push((i, j));
                }
            }
        }
        batch
    }
}

/// `log(1 + Σ_l exp(ν s_n^l) · Σ_m exp(−ν s_p^m))`; zero when either side is
/// empty.
pub fn glrtml_pair_loss(scores_p: &[f64], scores_n: &[f64], nu: f64) -> f64 {
    if scores_p.is_empty() || scores_n.is_empty() {
        return 0.0;
    }
    softplus(pair_logit(scores_p, scores_n, nu))
}

fn pair_logit(scores_p: &[f64], scores_n: &[f64], nu: f64) -> f64 {
    let neg: Vec<f64> = scores_n.iter().map(|s| nu * s).collect();
    let pos: Vec<f64> = scores_p.iter().map(|s| -nu * s).collect();
    log_sum_exp(&neg) + log_sum_exp(&pos)
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// Gradients of [`glrtml_pair_loss`] with respect to each positive and each
/// negative score.
pub fn pair_loss_grad_scores(scores_p: &[f64], scores_n: &[f64], nu: f64) -> (Vec<f64>, Vec<f64>) {
    if scores_p.is_empty() || scores_n.is_empty() {
        return (vec![0.0; scores_p.len()], vec![0.0; scores_n.len()]);
    }
    let z = pair_logit(scores_p, scores_n, nu);
    let sigma = 1.0 / (1.0 + (-z).exp());
    let pos: Vec<f64> = scores_p.iter().map(|s| -nu * s).collect();
    let neg: Vec<f64> = scores_n.iter().map(|s| nu * s).collect();
    let gp = softmax(&pos).into_iter().map(|w| -nu * sigma * w).collect();
    let gn = softmax(&neg).into_iter().map(|w| nu * sigma * w).collect();
    (gp, gn)
}

fn check_label(label: i64, classes: usize) -> Result<usize> {
    if label < 0 || label as usize >= classes {
        Err(Error::InvalidLabel { label, classes })
    } else {
        Ok(label as usize)
    }
}

/// `−(1/M) Σ_i log p(y_i | x_i)` over rows of class log-probabilities.
pub fn identity_loss(log_probs: &[Vec<f64>], labels: &[i64]) -> Result<f64> {
    check_dim(log_probs.len(), labels.len())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (row, &y) in log_probs.iter().zip(labels) {
        total -= row[check_label(y, row.len())?];
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of [`identity_loss`] with respect to every log-probability.
pub fn identity_loss_grad(log_probs: &[Vec<f64>], labels: &[i64]) -> Result<Vec<Vec<f64>>> {
    check_dim(log_probs.len(), labels.len())?;
    let m = labels.len() as f64;
    log_probs
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let mut g = vec![0.0; row.len()];
            g[check_label(y, row.len())?] = -1.0 / m;
            Ok(g)
        })
        .collect()
}

pub fn total_loss(pair_loss: f64, id_loss: f64, alpha: f64) -> f64 {
    pair_loss + alpha * id_loss
}

/// Gradients of the quadratic score `diffᵀ F diff` with respect to the two
/// embeddings whose difference is `diff`: `(2F·diff, −2F·diff)`.
pub fn score_grad_embeddings(model: &MgModel, diff: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let g: Vec<f64> = model.form.mul_vec(diff)?.into_iter().map(|v| 2.0 * v).collect();
    let neg = g.iter().map(|v| -v).collect();
    Ok((g, neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glrt_mg::build_mg_model;
    use crate::numerics::{quadratic_form, ClipMode, SymMatrix};
    use proptest::prelude::*;

    #[test]
    fn pair_loss_examples() {
        for nu in [0.001, 1.0, 7.0] {
            assert!((glrtml_pair_loss(&[0.3], &[0.3], nu) - 2f64.ln()).abs() < 1e-15);
        }
        assert!(glrtml_pair_loss(&[50.0], &[-50.0], 1.0) < 1e-21);
        assert!((glrtml_pair_loss(&[0.0, 0.0], &[0.0, 0.0, 0.0], 0.001) - 7f64.ln()).abs() < 1e-14);
        assert_eq!(glrtml_pair_loss(&[], &[1.0], 1.0), 0.0);
        assert_eq!(glrtml_pair_loss(&[1.0], &[], 1.0), 0.0);
    }

    #[test]
    fn pair_loss_large_scores_do_not_overflow() {
        let v = glrtml_pair_loss(&[-1e5], &[1e5], 1.0);
        assert!((v - 2e5).abs() < 1e-6);
    }

    #[test]
    fn identity_loss_examples() {
        let uniform = vec![vec![-(4f64.ln()); 4]; 3];
        assert!((identity_loss(&uniform, &[0, 1, 3]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(identity_loss(&[vec![0.0, f64::NEG_INFINITY]], &[0]).unwrap(), 0.0);
        let lp = vec![vec![0.5f64.ln(), 0.5f64.ln()], vec![0.25f64.ln(), 0.75f64.ln()]];
        assert!((identity_loss(&lp, &[0, 0]).unwrap() - 1.5 * 2f64.ln()).abs() < 1e-15);
        assert!(matches!(identity_loss(&lp, &[0, 2]), Err(Error::InvalidLabel { label: 2, classes: 2 })));
        assert!(matches!(identity_loss(&lp, &[-1, 0]), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.4, 3.0, 0.0), 0.4);
        assert!((total_loss(2f64.ln(), 4f64.ln(), 1.0) - 2.0794).abs() < 1e-4);
        assert_eq!(total_loss(0.0, 1.0, 2.0), 2.0);
    }

    #[test]
    fn grad_scores_examples() {
        let (gp, gn) = pair_loss_grad_scores(&[0.0], &[0.0], 1.0);
        assert!((gp[0] + 0.5).abs() < 1e-15);
        assert!((gn[0] - 0.5).abs() < 1e-15);
        let (gp, _) = pair_loss_grad_scores(&[-2.0, 3.0], &[0.5], 0.7);
        assert!(gp[0].abs() > gp[1].abs());
    }

    #[test]
    fn grad_scores_match_finite_differences() {
        let sp = [0.3, -1.2, 2.5];
        let sn = [1.1, -0.4];
        let nu = 0.8;
        let (gp, gn) = pair_loss_grad_scores(&sp, &sn, nu);
        let h = 1e-6;
        for i in 0..sp.len() {
            let mut up = sp;
            up[i] += h;
            let mut dn = sp;
            dn[i] -= h;
            let fd = (glrtml_pair_loss(&up, &sn, nu) - glrtml_pair_loss(&dn, &sn, nu)) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-6 * gp[i].abs());
        }
        for i in 0..sn.len() {
            let mut up = sn;
            up[i] += h;
            let mut dn = sn;
            dn[i] -= h;
            let fd = (glrtml_pair_loss(&sp, &up, nu) - glrtml_pair_loss(&sp, &dn, nu)) / (2.0 * h);
            assert!((fd - gn[i]).abs() < 1e-6 * gn[i].abs());
        }
    }

    #[test]
    fn batch_pair_enumeration() {
        let b = PairBatch::from_labels(&[4, 4, 7]);
        assert_eq!(b.pos_pairs, vec![(0, 1)]);
        assert_eq!(b.neg_pairs, vec![(0, 2), (1, 2)]);
        let b = PairBatch::from_labels(&[0, 1, 2, 3, 4]);
        assert_eq!((b.pos_pairs.len(), b.neg_pairs.len()), (0, 10));
        let b = PairBatch::from_labels(&[2; 6]);
        assert_eq!((b.pos_pairs.len(), b.neg_pairs.len()), (15, 0));
    }

    #[test]
    fn score_grad_examples() {
        let model = build_mg_model(
            SymMatrix::scaled_identity(1, 0.5),
            SymMatrix::scaled_identity(1, 2.0),
            ClipMode::NoClip,
            1e-6,
        )
        .unwrap();
        let (gi, gj) = score_grad_embeddings(&model, &[2.0]).unwrap();
        assert!((gi[0] + 6.0).abs() < 1e-12 && (gj[0] - 6.0).abs() < 1e-12);
        let (gi, gj) = score_grad_embeddings(&model, &[0.0]).unwrap();
        assert_eq!((gi[0], gj[0]), (0.0, 0.0));
        assert!(score_grad_embeddings(&model, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn score_grad_finite_differences_8d() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let d = 8;
        let rows: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut a = SymMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                a.set(i, j, (0..d).map(|k| rows[k][i] * rows[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 });
            }
        }
        let model = build_mg_model(SymMatrix::identity(d), a, ClipMode::NoClip, 1e-6).unwrap();
        let xi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xj: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let score = |a: &[f64], b: &[f64]| {
            let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
            quadratic_form(&model.form, &diff).unwrap()
        };
        let diff: Vec<f64> = xi.iter().zip(&xj).map(|(p, q)| p - q).collect();
        let (gi, gj) = score_grad_embeddings(&model, &diff).unwrap();
        let h = 1e-5;
        for k in 0..d {
            let mut up = xi.clone();
            up[k] += h;
            let mut dn = xi.clone();
            dn[k] -= h;
            let fd = (score(&up, &xj) - score(&dn, &xj)) / (2.0 * h);
            assert!((fd - gi[k]).abs() < 1e-6 * gi[k].abs().max(1e-3));
            let mut up = xj.clone();
            up[k] += h;
            let mut dn = xj.clone();
            dn[k] -= h;
            let fd = (score(&xi, &up) - score(&xi, &dn)) / (2.0 * h);
            assert!((fd - gj[k]).abs() < 1e-6 * gj[k].abs().max(1e-3));
        }
    }

    proptest! {
        #[test]
        fn loss_monotone_in_scores(
            sp in prop::collection::vec(-50.0f64..50.0, 1..6),
            sn in prop::collection::vec(-50.0f64..50.0, 1..6),
            nu in 0.01f64..2.0,
        ) {
            let (gp, gn) = pair_loss_grad_scores(&sp, &sn, nu);
            prop_assert!(gp.iter().all(|g| *g < 0.0));
            prop_assert!(gn.iter().all(|g| *g > 0.0));
            prop_assert!(glrtml_pair_loss(&sp, &sn, nu) >= 0.0);
        }

        #[test]
        fn single_pair_loss_depends_on_difference(
            p in -20.0f64..20.0, n in -20.0f64..20.0, c in -20.0f64..20.0, nu in 0.01f64..2.0,
        ) {
            let a = glrtml_pair_loss(&[p], &[n], nu);
            let b = glrtml_pair_loss(&[p + c], &[n + c], nu);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
