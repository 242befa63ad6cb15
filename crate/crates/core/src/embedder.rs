//! Small fully connected embedding network `d_in → h → h → d` with tanh
//! hidden layers, a linear classifier head `d → C`, hand-written
//! backpropagation and SGD with momentum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{dot, log_sum_exp};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Affine layer `y = W x + b` with `W` stored row-major (`out × in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights in `±√(6/(in+out))`, zero bias.
    fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim).map(|o| dot(self.row(o), x) + self.bias[o]).collect()
    }

    /// Accumulates `g ⊗ x` into this layer's gradient and returns `Wᵀ g`.
    fn accumulate(&mut self, layer: &Dense, g: &[f64], x: &[f64]) -> Vec<f64> {
        let mut back = vec![0.0; self.in_dim];
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            self.bias[o] += go;
            let grad_row = &mut self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for ((w, xi), (b, lw)) in grad_row.iter_mut().zip(x).zip(back.iter_mut().zip(layer.row(o))) {
                *w += go * xi;
                *b += go * lw;
            }
        }
        back
    }

    fn shape_matches(&self, other: &Dense) -> bool {
        self.in_dim == other.in_dim
            && self.out_dim == other.out_dim
            && self.weights.len() == other.weights.len()
            && self.bias.len() == other.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderParams {
    pub hidden1: Dense,
    pub hidden2: Dense,
    pub embedding: Dense,
    pub classifier: Dense,
}

impl EmbedderParams {
    pub fn zeros(d_in: usize, hidden: usize, d: usize, classes: usize) -> Self {
        EmbedderParams {
            hidden1: Dense::zeros(d_in, hidden),
            hidden2: Dense::zeros(hidden, hidden),
            embedding: Dense::zeros(hidden, d),
            classifier: Dense::zeros(d, classes),
        }
    }

    pub fn init(d_in: usize, hidden: usize, d: usize, classes: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || hidden == 0 || d == 0 || classes == 0 {
            return Err(Error::InvalidConfig(format!(
                "embedder dimensions must be positive (d_in={d_in}, hidden={hidden}, d={d}, classes={classes})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(EmbedderParams {
            hidden1: Dense::glorot(d_in, hidden, &mut rng),
            hidden2: Dense::glorot(hidden, hidden, &mut rng),
            embedding: Dense::glorot(hidden, d, &mut rng),
            classifier: Dense::glorot(d, classes, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        EmbedderParams::zeros(self.input_dim(), self.hidden1.out_dim, self.embedding_dim(), self.num_classes())
    }

    pub fn input_dim(&self) -> usize {
        self.hidden1.in_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.out_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.layers();
        for l in layers {
            check_dim(l.in_dim * l.out_dim, l.weights.len())?;
            check_dim(l.out_dim, l.bias.len())?;
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].out_dim, pair[1].in_dim)?;
        }
        if self.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidConfig("embedder has non-finite parameters".into()));
        }
        Ok(())
    }

    fn layers(&self) -> [&Dense; 4] {
        [&self.hidden1, &self.hidden2, &self.embedding, &self.classifier]
    }

    pub fn slices(&self) -> [&[f64]; 8] {
        [
            &self.hidden1.weights,
            &self.hidden1.bias,
            &self.hidden2.weights,
            &self.hidden2.bias,
            &self.embedding.weights,
            &self.embedding.bias,
            &self.classifier.weights,
            &self.classifier.bias,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 8] {
        [
            &mut self.hidden1.weights,
            &mut self.hidden1.bias,
            &mut self.hidden2.weights,
            &mut self.hidden2.bias,
            &mut self.embedding.weights,
            &mut self.embedding.bias,
            &mut self.classifier.weights,
            &mut self.classifier.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn same_shape(&self, other: &EmbedderParams) -> bool {
        self.layers().iter().zip(other.layers()).all(|(a, b)| a.shape_matches(b))
    }

    /// Embedding only, without the classifier head or retained activations.
    pub fn embed(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), input.len())?;
        let a1: Vec<f64> = self.hidden1.apply(input).into_iter().map(f64::tanh).collect();
        let a2: Vec<f64> = self.hidden2.apply(&a1).into_iter().map(f64::tanh).collect();
        Ok(self.embedding.apply(&a2))
    }

    pub fn embed_all<V: AsRef<[f64]>>(&self, inputs: &[V]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|x| self.embed(x.as_ref())).collect()
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub hidden1: Vec<f64>,
    pub hidden2: Vec<f64>,
    pub embedding: Vec<f64>,
    pub log_probs: Vec<f64>,
}

pub fn forward(params: &EmbedderParams, input: &[f64]) -> Result<ForwardTrace> {
    check_dim(params.input_dim(), input.len())?;
    let hidden1: Vec<f64> = params.hidden1.apply(input).into_iter().map(f64::tanh).collect();
    let hidden2: Vec<f64> = params.hidden2.apply(&hidden1).into_iter().map(f64::tanh).collect();
    let embedding = params.embedding.apply(&hidden2);
    let logits = params.classifier.apply(&embedding);
    let lse = log_sum_exp(&logits);
    let log_probs = logits.into_iter().map(|l| l - lse).collect();
    Ok(ForwardTrace {
        input: input.to_vec(),
        hidden1,
        hidden2,
        embedding,
        log_probs,
    })
}

/// Parameter gradients of a loss whose upstream gradients with respect to
/// each instance's embedding and class log-probabilities are given.
pub fn backward(
    params: &EmbedderParams,
    traces: &[ForwardTrace],
    d_embedding: &[Vec<f64>],
    d_log_probs: &[Vec<f64>],
) -> Result<EmbedderParams> {
    check_dim(traces.len(), d_embedding.len())?;
    check_dim(traces.len(), d_log_probs.len())?;
    let mut grads = params.zeros_like();
    for ((t, g_emb), g_lp) in traces.iter().zip(d_embedding).zip(d_log_probs) {
        check_dim(params.embedding_dim(), g_emb.len())?;
        check_dim(params.num_classes(), g_lp.len())?;
        check_dim(params.embedding_dim(), t.embedding.len())?;

        // log_softmax: ∂/∂logit_c = g_c − p_c Σ g.
        let g_sum: f64 = g_lp.iter().sum();
        let g_logits: Vec<f64> = g_lp
            .iter()
            .zip(&t.log_probs)
            .map(|(g, lp)| g - lp.exp() * g_sum)
            .collect();
        let mut g_e = grads.classifier.accumulate(&params.classifier, &g_logits, &t.embedding);
        for (a, b) in g_e.iter_mut().zip(g_emb) {
            *a += b;
        }
        let g_a2 = grads.embedding.accumulate(&params.embedding, &g_e, &t.hidden2);
        let g_z2: Vec<f64> = g_a2.iter().zip(&t.hidden2).map(|(g, a)| g * (1.0 - a * a)).collect();
        let g_a1 = grads.hidden2.accumulate(&params.hidden2, &g_z2, &t.hidden1);
        let g_z1: Vec<f64> = g_a1.iter().zip(&t.hidden1).map(|(g, a)| g * (1.0 - a * a)).collect();
        grads.hidden1.accumulate(&params.hidden1, &g_z1, &t.input);
    }
    Ok(grads)
}

/// Momentum buffers, shaped like the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub velocity: EmbedderParams,
}

impl SgdState {
    pub fn new(params: &EmbedderParams) -> Self {
        SgdState {
            velocity: params.zeros_like(),
        }
    }

    pub fn reset(&mut self) {
        for s in self.velocity.slices_mut() {
            s.fill(0.0);
        }
    }
}

/// `v ← μv + g + λp`, then `p ← p − ηv`.
pub fn sgd_step(
    params: &mut EmbedderParams,
    grads: &EmbedderParams,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    state: &mut SgdState,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.velocity) {
        return Err(Error::DimensionMismatch {
            expected: params.num_params(),
            actual: grads.num_params(),
        });
    }
    for ((p, g), v) in params
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(state.velocity.slices_mut())
    {
        for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi + weight_decay * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Serialized network plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: EmbedderParams,
    pub optimizer: SgdState,
}

impl Checkpoint {
    pub fn new(params: EmbedderParams, optimizer: SgdState) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params,
            optimizer,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        ck.params.validate()?;
        Ok(ck)
    }
}
