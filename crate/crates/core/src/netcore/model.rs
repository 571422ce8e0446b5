//! Layer-stack classifier: mean-pooled embedding featurizer, a stack of
//! residual tanh layers, and a layer-attention decoder with a linear head.
//!
//! ```text
//! h_0 = mean_t E[t]                      (or E[t_i] for per-token positions)
//! h_j = h_{j-1} + tanh(W_j h_{j-1} + b_j)
//! m   = sum_j softmax(s)_j * h_j          (j over surviving layers)
//! z   = softmax(U m + c)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocabulary index. Index 0 is reserved for out-of-vocabulary tokens.
pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<TokenId>,
    pub label: Option<usize>,
    /// `Some(n)`: one prediction per token for the first `n` tokens.
    /// `None`: a single prediction from the pooled sentence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<usize>,
}

impl Example {
    pub fn labeled(tokens: Vec<TokenId>, label: usize) -> Self {
        Self {
            tokens,
            label: Some(label),
            positions: None,
        }
    }

    pub fn unlabeled(tokens: Vec<TokenId>) -> Self {
        Self {
            tokens,
            label: None,
            positions: None,
        }
    }

    /// Same tokens with the label removed.
    pub fn without_label(&self) -> Self {
        Self {
            label: None,
            ..self.clone()
        }
    }

    pub fn prediction_count(&self) -> usize {
        self.positions.unwrap_or(1)
    }
}

/// A probability vector over the label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::input("empty probability vector"));
        }
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::input(format!("negative or non-finite probability in {p:?}")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::input(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Encoder depth of the original (uncompressed) model.
    pub depth: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.hidden == 0 || self.classes < 2 || self.depth == 0 {
            return Err(Error::input(format!("degenerate model dimensions {self:?}")));
        }
        Ok(())
    }
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            vocab: 2000,
            hidden: 32,
            classes: 2,
            depth: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    /// 1-based position of this layer in the original stack.
    pub index: usize,
    /// Row-major `hidden x hidden`, output-by-input.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Identifies one parameter tensor. Layer variants carry the position in the
/// *surviving* stack, not the original layer index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Embedding,
    LayerWeight(usize),
    LayerBias(usize),
    Attention,
    HeadWeight,
    HeadBias,
}

impl ParamId {
    pub(crate) fn slot(self, n_layers: usize) -> usize {
        match self {
            ParamId::Embedding => 0,
            ParamId::LayerWeight(j) => 1 + 2 * j,
            ParamId::LayerBias(j) => 2 + 2 * j,
            ParamId::Attention => 1 + 2 * n_layers,
            ParamId::HeadWeight => 2 + 2 * n_layers,
            ParamId::HeadBias => 3 + 2 * n_layers,
        }
    }

    pub fn is_decoder(self) -> bool {
        matches!(self, ParamId::Attention | ParamId::HeadWeight | ParamId::HeadBias)
    }
}

/// Per-example gradients for the trainable tensors only.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
    n_layers: usize,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.slot(self.n_layers)).and_then(|s| s.as_deref())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        let n = self.n_layers;
        param_ids(n)
            .into_iter()
            .filter(move |id| self.slots[id.slot(n)].is_some())
    }

    pub(crate) fn slots(&self) -> &[Option<Vec<f64>>] {
        &self.slots
    }
}

pub(crate) fn param_ids(n_layers: usize) -> Vec<ParamId> {
    let mut ids = Vec::with_capacity(4 + 2 * n_layers);
    ids.push(ParamId::Embedding);
    for j in 0..n_layers {
        ids.push(ParamId::LayerWeight(j));
        ids.push(ParamId::LayerBias(j));
    }
    ids.push(ParamId::Attention);
    ids.push(ParamId::HeadWeight);
    ids.push(ParamId::HeadBias);
    ids
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStackModel {
    pub(crate) dims: Dims,
    pub(crate) embedding: Vec<f64>,
    pub(crate) layers: Vec<EncoderLayer>,
    pub(crate) attention: Vec<f64>,
    pub(crate) head_weight: Vec<f64>,
    pub(crate) head_bias: Vec<f64>,
    /// One flag per tensor in `param_ids` order; `true` = frozen.
    pub(crate) frozen: Vec<bool>,
}

/// Activations kept for the backward pass.
struct Trace {
    hidden: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    mix: Vec<f64>,
    probs: Vec<f64>,
}

impl LayerStackModel {
    /// Fresh model with every parameter trainable.
    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let d = dims.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb_dist = Normal::new(0.0, 1.0).expect("valid normal");
        let layer_dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid normal");

        let embedding = (0..dims.vocab * d).map(|_| emb_dist.sample(&mut rng)).collect();
        let layers = (1..=dims.depth)
            .map(|index| EncoderLayer {
                index,
                weight: (0..d * d).map(|_| layer_dist.sample(&mut rng)).collect(),
                bias: vec![0.0; d],
            })
            .collect();
        let head_weight = (0..dims.classes * d).map(|_| layer_dist.sample(&mut rng)).collect();

        Ok(Self {
            dims,
            embedding,
            layers,
            attention: vec![0.0; dims.depth],
            head_weight,
            head_bias: vec![0.0; dims.classes],
            frozen: vec![false; 4 + 2 * dims.depth],
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    /// Original (1-based) indices of the surviving layers, in order.
    pub fn active_layers(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.index).collect()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        param_ids(self.layers.len())
    }

    pub fn tensor(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::Embedding => &self.embedding,
            ParamId::LayerWeight(j) => &self.layers[j].weight,
            ParamId::LayerBias(j) => &self.layers[j].bias,
            ParamId::Attention => &self.attention,
            ParamId::HeadWeight => &self.head_weight,
            ParamId::HeadBias => &self.head_bias,
        }
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut [f64] {
        match id {
            ParamId::Embedding => &mut self.embedding,
            ParamId::LayerWeight(j) => &mut self.layers[j].weight,
            ParamId::LayerBias(j) => &mut self.layers[j].bias,
            ParamId::Attention => &mut self.attention,
            ParamId::HeadWeight => &mut self.head_weight,
            ParamId::HeadBias => &mut self.head_bias,
        }
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.slot(self.layers.len())]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        let slot = id.slot(self.layers.len());
        self.frozen[slot] = frozen;
    }

    pub fn freeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = true);
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = false);
    }

    pub fn freeze_mask(&self) -> &[bool] {
        &self.frozen
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.param_ids()
            .into_iter()
            .filter(|&id| !self.is_frozen(id))
            .map(|id| self.tensor(id).len())
            .sum()
    }

    /// Replaces the decoder with a freshly initialised one over `classes`
    /// outputs. Attention is reset to uniform.
    pub fn reset_decoder(&mut self, classes: usize, seed: u64) -> Result<()> {
        if classes < 2 {
            return Err(Error::input("decoder needs at least two classes"));
        }
        let d = self.dims.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid normal");
        self.dims.classes = classes;
        self.attention = vec![0.0; self.layers.len()];
        self.head_weight = (0..classes * d).map(|_| dist.sample(&mut rng)).collect();
        self.head_bias = vec![0.0; classes];
        Ok(())
    }

    fn check_tokens(&self, x: &Example) -> Result<()> {
        if x.tokens.is_empty() {
            return Err(Error::input("example has no tokens"));
        }
        if let Some(&t) = x.tokens.iter().find(|&&t| t as usize >= self.dims.vocab) {
            return Err(Error::input(format!(
                "token {t} outside vocabulary of size {}",
                self.dims.vocab
            )));
        }
        Ok(())
    }

    fn pooled_input(&self, tokens: &[TokenId]) -> Vec<f64> {
        let d = self.dims.hidden;
        let mut h = vec![0.0; d];
        for &t in tokens {
            let row = &self.embedding[t as usize * d..(t as usize + 1) * d];
            for (acc, &v) in h.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let n = tokens.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }

    fn token_input(&self, t: TokenId) -> Vec<f64> {
        let d = self.dims.hidden;
        self.embedding[t as usize * d..(t as usize + 1) * d].to_vec()
    }

    fn run(&self, h0: Vec<f64>) -> Trace {
        let d = self.dims.hidden;
        let mut hidden = Vec::with_capacity(self.layers.len() + 1);
        let mut activations = Vec::with_capacity(self.layers.len());
        hidden.push(h0);
        for layer in &self.layers {
            let prev = hidden.last().expect("input present");
            let mut act = vec![0.0; d];
            for (r, a) in act.iter_mut().enumerate() {
                let row = &layer.weight[r * d..(r + 1) * d];
                let pre: f64 = row.iter().zip(prev).map(|(w, h)| w * h).sum::<f64>() + layer.bias[r];
                *a = pre.tanh();
            }
            let next: Vec<f64> = prev.iter().zip(&act).map(|(h, a)| h + a).collect();
            activations.push(act);
            hidden.push(next);
        }

        let alpha = softmax(&self.attention);
        let mut mix = vec![0.0; d];
        for (weight, h) in alpha.iter().zip(&hidden[1..]) {
            for (m, v) in mix.iter_mut().zip(h) {
                *m += weight * v;
            }
        }

        let logits: Vec<f64> = (0..self.dims.classes)
            .map(|c| {
                let row = &self.head_weight[c * d..(c + 1) * d];
                row.iter().zip(&mix).map(|(w, m)| w * m).sum::<f64>() + self.head_bias[c]
            })
            .collect();
        let probs = softmax(&logits);

        Trace {
            hidden,
            activations,
            alpha,
            mix,
            probs,
        }
    }

    /// One distribution per prediction position of `x`.
    pub fn forward(&self, x: &Example) -> Result<Vec<ProbDist>> {
        self.check_tokens(x)?;
        match x.positions {
            None => Ok(vec![ProbDist(self.run(self.pooled_input(&x.tokens)).probs)]),
            Some(n) => {
                if n == 0 || n > x.tokens.len() {
                    return Err(Error::input(format!(
                        "{n} positions requested for a {}-token example",
                        x.tokens.len()
                    )));
                }
                Ok(x.tokens[..n]
                    .iter()
                    .map(|&t| ProbDist(self.run(self.token_input(t)).probs))
                    .collect())
            }
        }
    }

    /// Sentence-level distribution from the pooled input, regardless of
    /// `x.positions`.
    pub fn classify(&self, x: &Example) -> Result<ProbDist> {
        self.check_tokens(x)?;
        Ok(ProbDist(self.run(self.pooled_input(&x.tokens)).probs))
    }

    pub fn predict_label(&self, x: &Example) -> Result<usize> {
        Ok(self.classify(x)?.argmax())
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to every
    /// trainable tensor. Frozen tensors have no entry.
    pub fn loss_and_grads(&self, batch: &[Example]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let n_layers = self.layers.len();
        let d = self.dims.hidden;
        let ids = self.param_ids();
        let mut slots: Vec<Option<Vec<f64>>> = ids
            .iter()
            .map(|&id| (!self.is_frozen(id)).then(|| vec![0.0; self.tensor(id).len()]))
            .collect();

        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for x in batch {
            let label = x
                .label
                .ok_or_else(|| Error::input("unlabeled example in training batch"))?;
            if label >= self.dims.classes {
                return Err(Error::input(format!(
                    "label {label} outside {} classes",
                    self.dims.classes
                )));
            }
            self.check_tokens(x)?;
            let trace = self.run(self.pooled_input(&x.tokens));
            loss -= trace.probs[label].ln() * scale;

            // d loss / d logits
            let mut dz = trace.probs.clone();
            dz[label] -= 1.0;
            dz.iter_mut().for_each(|g| *g *= scale);

            if let Some(g) = &mut slots[ParamId::HeadWeight.slot(n_layers)] {
                for c in 0..self.dims.classes {
                    for k in 0..d {
                        g[c * d + k] += dz[c] * trace.mix[k];
                    }
                }
            }
            if let Some(g) = &mut slots[ParamId::HeadBias.slot(n_layers)] {
                for (gc, z) in g.iter_mut().zip(&dz) {
                    *gc += z;
                }
            }

            let mut dmix = vec![0.0; d];
            for c in 0..self.dims.classes {
                let row = &self.head_weight[c * d..(c + 1) * d];
                for k in 0..d {
                    dmix[k] += row[k] * dz[c];
                }
            }

            if let Some(g) = &mut slots[ParamId::Attention.slot(n_layers)] {
                let dalpha: Vec<f64> = trace.hidden[1..]
                    .iter()
                    .map(|h| h.iter().zip(&dmix).map(|(a, b)| a * b).sum())
                    .collect();
                let inner: f64 = trace.alpha.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
                for j in 0..n_layers {
                    g[j] += trace.alpha[j] * (dalpha[j] - inner);
                }
            }

            let needs_encoder = (0..n_layers)
                .any(|j| !self.is_frozen(ParamId::LayerWeight(j)) || !self.is_frozen(ParamId::LayerBias(j)))
                || !self.is_frozen(ParamId::Embedding);
            if !needs_encoder {
                continue;
            }

            // Gradient w.r.t. h_j, walking the stack top-down.
            let mut dh: Vec<f64> = dmix.iter().map(|v| v * trace.alpha[n_layers - 1]).collect();
            for j in (0..n_layers).rev() {
                let layer = &self.layers[j];
                let act = &trace.activations[j];
                let prev = &trace.hidden[j];
                let du: Vec<f64> = dh.iter().zip(act).map(|(g, a)| g * (1.0 - a * a)).collect();
                if let Some(g) = &mut slots[ParamId::LayerWeight(j).slot(n_layers)] {
                    for r in 0..d {
                        for k in 0..d {
                            g[r * d + k] += du[r] * prev[k];
                        }
                    }
                }
                if let Some(g) = &mut slots[ParamId::LayerBias(j).slot(n_layers)] {
                    for (gb, u) in g.iter_mut().zip(&du) {
                        *gb += u;
                    }
                }
                let mut below = dh;
                for r in 0..d {
                    let row = &layer.weight[r * d..(r + 1) * d];
                    for k in 0..d {
                        below[k] += row[k] * du[r];
                    }
                }
                if j > 0 {
                    for (b, m) in below.iter_mut().zip(&dmix) {
                        *b += trace.alpha[j - 1] * m;
                    }
                }
                dh = below;
            }

            if let Some(g) = &mut slots[ParamId::Embedding.slot(n_layers)] {
                let share = 1.0 / x.tokens.len() as f64;
                for &t in &x.tokens {
                    let row = &mut g[t as usize * d..(t as usize + 1) * d];
                    for (r, v) in row.iter_mut().zip(&dh) {
                        *r += v * share;
                    }
                }
            }
        }

        Ok((loss, Gradients { slots, n_layers }))
    }
}
