//! Gaussian-mixture hypothesis models fitted by EM, and the mixture
//! log-likelihood-ratio score.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::glrt_mg::{Hypothesis, MIN_RIDGE};
use crate::kmeans::kmeans_plus_plus;
use crate::numerics::{cholesky_inverse, floor_spectrum, log_sum_exp, quadratic_form_unchecked, SymMatrix};

/// A component whose responsibility mass falls below this is re-seeded.
pub const EMPTY_COMPONENT_MASS: f64 = 1e-12;

const MAX_RESEEDS_PER_COMPONENT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub hypothesis: Hypothesis,
    pub components: Vec<GmmComponent>,
}

impl GmmParams {
    pub fn single(hypothesis: Hypothesis, mean: Vec<f64>, cov: SymMatrix) -> Self {
        GmmParams {
            hypothesis,
            components: vec![GmmComponent {
                weight: 1.0,
                mean,
                cov,
            }],
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::EmptyInput("mixture has no components"));
        }
        let d = self.dim();
        let mut total = 0.0;
        for c in &self.components {
            check_dim(d, c.mean.len())?;
            check_dim(d, c.cov.dim())?;
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::InvalidConfig(format!("component weight {} outside (0, 1]", c.weight)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("component weights sum to {total}")));
        }
        Ok(())
    }

    /// Free parameters: per component a weight, a mean and a symmetric
    /// covariance.
    pub fn parameter_count(&self) -> usize {
        let d = self.dim();
        self.k() * (1 + d + d * (d + 1) / 2)
    }

    /// Caches inverses and normalizers for repeated evaluation.
    pub fn prepare(&self) -> Result<PreparedGmm> {
        self.validate()?;
        let components = self
            .components
            .iter()
            .map(|c| {
                let density = GaussianDensity::new(c.mean.clone(), &c.cov)?;
                Ok(PreparedComponent {
                    log_weight: c.weight.ln(),
                    density,
                })
            })
            .collect::<Result<_>>()?;
        Ok(PreparedGmm { components })
    }

    /// The even mixture `½p(x) + ½p(−x)`. Components with a numerically zero
    /// mean are kept as one zero-mean component; the rest are split into
    /// mirrored halves.
    pub fn mirror_closure(&self) -> GmmParams {
        let mut components = Vec::new();
        for c in &self.components {
            let norm = c.mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = c.cov.trace().max(0.0).sqrt();
            if norm <= 1e-9 * scale {
                components.push(GmmComponent {
                    weight: c.weight,
                    mean: vec![0.0; c.mean.len()],
                    cov: c.cov.clone(),
                });
            } else {
                components.push(GmmComponent {
                    weight: 0.5 * c.weight,
                    mean: c.mean.clone(),
                    cov: c.cov.clone(),
                });
                components.push(GmmComponent {
                    weight: 0.5 * c.weight,
                    mean: c.mean.iter().map(|v| -v).collect(),
                    cov: c.cov.clone(),
                });
            }
        }
        GmmParams {
            hypothesis: self.hypothesis,
            components,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: Vec<f64>,
    inv_cov: SymMatrix,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, cov: &SymMatrix) -> Result<Self> {
        check_dim(mean.len(), cov.dim())?;
        let (inv_cov, log_det) = cholesky_inverse(cov)?;
        let d = mean.len() as f64;
        Ok(GaussianDensity {
            mean,
            inv_cov,
            log_norm: -0.5 * (d * (2.0 * PI).ln() + log_det),
        })
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        quadratic_form_unchecked(&self.inv_cov, &centered)
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x)
    }

    /// `∇ₓ log N(x) = −Σ⁻¹(x − μ)`.
    fn grad_logpdf_into(&self, x: &[f64], weight: f64, out: &mut [f64]) {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.inv_cov.row(i);
            let v: f64 = row.iter().zip(&centered).map(|(a, b)| a * b).sum();
            *o -= weight * v;
        }
    }
}

#[derive(Debug, Clone)]
struct PreparedComponent {
    log_weight: f64,
    density: GaussianDensity,
}

#[derive(Debug, Clone)]
pub struct PreparedGmm {
    components: Vec<PreparedComponent>,
}

impl PreparedGmm {
    pub fn dim(&self) -> usize {
        self.components[0].density.mean.len()
    }

    fn log_joint(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.components
                .iter()
                .map(|c| c.log_weight + c.density.logpdf(x)),
        );
    }

    pub fn logpdf(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let mut buf = Vec::with_capacity(self.components.len());
        self.log_joint(x, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// Posterior component probabilities for `x`; sums to 1.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut buf = Vec::with_capacity(self.components.len());
        self.log_joint(x, &mut buf);
        Ok(normalize_log_row(&buf).0)
    }

    pub fn grad_logpdf(&self, x: &[f64]) -> Result<Vec<f64>> {
        let gamma = self.responsibilities(x)?;
        let mut out = vec![0.0; x.len()];
        for (c, g) in self.components.iter().zip(gamma) {
            c.density.grad_logpdf_into(x, g, &mut out);
        }
        Ok(out)
    }
}

/// Exponentiates and renormalizes a row of log-joints. Returns the row and
/// its log-sum-exp.
fn normalize_log_row(log_joint: &[f64]) -> (Vec<f64>, f64) {
    let lse = log_sum_exp(log_joint);
    let mut row: Vec<f64> = log_joint.iter().map(|l| (l - lse).exp()).collect();
    let total: f64 = row.iter().sum();
    for r in &mut row {
        *r /= total;
    }
    (row, lse)
}

pub fn gauss_logpdf(mean: &[f64], cov: &SymMatrix, x: &[f64]) -> Result<f64> {
    check_dim(mean.len(), x.len())?;
    Ok(GaussianDensity::new(mean.to_vec(), cov)?.logpdf(x))
}

pub fn gmm_logpdf(params: &GmmParams, x: &[f64]) -> Result<f64> {
    params.prepare()?.logpdf(x)
}

/// Row-stochastic posterior matrix `γ[l][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub rows: Vec<Vec<f64>>,
}

/// E-step over all samples. Returns responsibilities, the per-sample mixture
/// log-density, and their mean.
pub fn e_step(model: &PreparedGmm, samples: &[Vec<f64>]) -> (Responsibilities, Vec<f64>, f64) {
    let mut buf = Vec::with_capacity(model.components.len());
    let mut rows = Vec::with_capacity(samples.len());
    let mut log_density = Vec::with_capacity(samples.len());
    for x in samples {
        model.log_joint(x, &mut buf);
        let (row, lse) = normalize_log_row(&buf);
        rows.push(row);
        log_density.push(lse);
    }
    let mean = log_density.iter().sum::<f64>() / samples.len().max(1) as f64;
    (Responsibilities { rows }, log_density, mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the relative gain in mean log-likelihood drops below this.
    pub tol: f64,
    /// Eigenvalue floor for every component covariance; `None` uses
    /// `1e-6 · trace(pooled)/d`.
    pub cov_floor: Option<f64>,
    /// Restrict covariances to diagonal matrices.
    pub diagonal: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            k: 1,
            seed: 0,
            max_iters: 100,
            tol: 1e-6,
            cov_floor: None,
            diagonal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub params: GmmParams,
    /// Mean per-sample log-likelihood, one entry per E-step. The last entry
    /// belongs to the returned parameters.
    pub history: Vec<f64>,
    pub converged: bool,
    /// Number of components re-seeded after losing all mass.
    pub reseeds: usize,
}

fn pooled_covariance(samples: &[Vec<f64>]) -> SymMatrix {
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for x in samples {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    weighted_scatter(samples, None, &mean, n)
}

/// `Σ w_l (x_l − μ)(x_l − μ)ᵀ / total`.
fn weighted_scatter(samples: &[Vec<f64>], weights: Option<&[f64]>, mean: &[f64], total: f64) -> SymMatrix {
    let d = mean.len();
    let mut acc = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for (l, x) in samples.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[l]);
        if w == 0.0 {
            continue;
        }
        for ((c, a), b) in centered.iter_mut().zip(x).zip(mean) {
            *c = a - b;
        }
        for i in 0..d {
            let wi = w * centered[i];
            let row = &mut acc[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += wi * centered[j];
            }
        }
    }
    let mut out = SymMatrix::zeros(d);
    for i in 0..d {
        for j in i..d {
            out.set(i, j, acc[i * d + j] / total);
        }
    }
    out
}

fn constrain_cov(cov: SymMatrix, floor: f64, diagonal: bool) -> Result<SymMatrix> {
    if diagonal {
        let diag: Vec<f64> = cov.diag().into_iter().map(|v| v.max(floor)).collect();
        Ok(SymMatrix::from_diag(&diag))
    } else {
        floor_spectrum(&cov, floor)
    }
}

/// Fits a `cfg.k`-component mixture by expectation–maximization.
///
/// Means start from k-means++ seeds, covariances from the pooled sample
/// covariance, weights uniform. After every M-step each covariance has its
/// eigenvalues floored at `cov_floor`, which is the constrained maximizer of
/// the M-step objective, so the likelihood history stays nondecreasing.
pub fn em_fit(samples: &[Vec<f64>], hypothesis: Hypothesis, cfg: &EmConfig) -> Result<EmFit> {
    let k = cfg.k;
    if k == 0 {
        return Err(Error::InvalidConfig("mixture needs at least one component".into()));
    }
    if samples.len() < k {
        return Err(Error::TooFewPoints {
            points: samples.len(),
            k,
        });
    }
    let d = samples[0].len();
    for x in samples {
        check_dim(d, x.len())?;
    }
    let n = samples.len() as f64;

    let pooled = pooled_covariance(samples);
    let floor = cfg
        .cov_floor
        .unwrap_or_else(|| 1e-6 * pooled.trace() / d.max(1) as f64)
        .max(MIN_RIDGE);
    let init_cov = constrain_cov(pooled, floor, cfg.diagonal)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = kmeans_plus_plus(samples, k, &mut rng);
    let mut params = GmmParams {
        hypothesis,
        components: seeds
            .into_iter()
            .map(|mean| GmmComponent {
                weight: 1.0 / k as f64,
                mean,
                cov: init_cov.clone(),
            })
            .collect(),
    };

    let mut history = Vec::new();
    let mut converged = false;
    let mut reseeds = 0;
    for iter in 0..=cfg.max_iters {
        let prepared = params.prepare()?;
        let (resp, log_density, mean_ll) = e_step(&prepared, samples);
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            if mean_ll - prev <= cfg.tol * prev.abs() {
                history.push(mean_ll);
                converged = true;
                break;
            }
        }
        history.push(mean_ll);
        if iter == cfg.max_iters {
            break;
        }

        // M-step.
        let mut components = Vec::with_capacity(k);
        for j in 0..k {
            let gamma: Vec<f64> = resp.rows.iter().map(|r| r[j]).collect();
            let mass: f64 = gamma.iter().sum();
            if mass < EMPTY_COMPONENT_MASS {
                reseeds += 1;
                if reseeds > MAX_RESEEDS_PER_COMPONENT * k {
                    return Err(Error::EmptyComponent { component: j });
                }
                let worst = log_density
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                components.push(GmmComponent {
                    weight: 1.0 / k as f64,
                    mean: samples[worst].clone(),
                    cov: init_cov.clone(),
                });
                continue;
            }
            let mut mean = vec![0.0; d];
            for (x, g) in samples.iter().zip(&gamma) {
                for (m, v) in mean.iter_mut().zip(x) {
                    *m += g * v;
                }
            }
            for m in &mut mean {
                *m /= mass;
            }
            let cov = constrain_cov(weighted_scatter(samples, Some(&gamma), &mean, mass), floor, cfg.diagonal)?;
            components.push(GmmComponent {
                weight: mass / n,
                mean,
                cov,
            });
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        params.components = components;
    }

    Ok(EmFit {
        params,
        history,
        converged,
        reseeds,
    })
}

/// The multiset `diffs ∪ {−x : x ∈ diffs}`.
pub fn symmetrize<V: AsRef<[f64]>>(diffs: &[V]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = diffs.iter().map(|x| x.as_ref().to_vec()).collect();
    out.extend(diffs.iter().map(|x| x.as_ref().iter().map(|v| -v).collect::<Vec<f64>>()));
    out
}

/// Fits a mixture on the symmetrized diffs and closes it under negation, so
/// the returned density is even.
pub fn fit_symmetric_gmm<V: AsRef<[f64]>>(
    diffs: &[V],
    hypothesis: Hypothesis,
    cfg: &EmConfig,
) -> Result<(GmmParams, EmFit)> {
    let fit = em_fit(&symmetrize(diffs), hypothesis, cfg)?;
    Ok((fit.params.mirror_closure(), fit))
}

/// Log-likelihood ratio `log p(x|ϑ1) − log p(x|ϑ0)`.
pub fn gmm_score(model1: &GmmParams, model0: &GmmParams, diff: &[f64]) -> Result<f64> {
    Ok(gmm_logpdf(model1, diff)? - gmm_logpdf(model0, diff)?)
}

/// Approximate mixture score as a responsibility-weighted sum of squared
/// Mahalanobis distances, with the paired hypothesis collapsed to a single
/// zero-mean Gaussian `Σ¹`:
/// `−½ D²(x, 0, Σ¹) + Σ_k (γ_k/2) D²(x, μ_k, Σ_k⁰)`.
pub fn weighted_mahalanobis_approx(sigma1: &SymMatrix, model0: &GmmParams, diff: &[f64]) -> Result<f64> {
    let paired = GaussianDensity::new(vec![0.0; sigma1.dim()], sigma1)?;
    let prepared0 = model0.prepare()?;
    check_dim(prepared0.dim(), diff.len())?;
    let gamma = prepared0.responsibilities(diff)?;
    let mut score = -0.5 * paired.mahalanobis_sq(diff);
    for (c, g) in prepared0.components.iter().zip(gamma) {
        score += 0.5 * g * c.density.mahalanobis_sq(diff);
    }
    Ok(score)
}
