use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics;
use super::model::{Example, Gradients, LayerStackModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Decoupled (AdamW-style) decay applied to trainable tensors.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::default(),
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.weight_decay >= 0.0) {
            return Err(Error::input(format!("invalid training config {self:?}")));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::input(format!("invalid Adam parameters {:?}", self.optimizer)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: LayerStackModel,
    /// Mean batch loss, one entry per optimisation step.
    pub loss_trace: Vec<f64>,
}

struct OptimizerState {
    step: u64,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
}

impl OptimizerState {
    fn new(model: &LayerStackModel) -> Self {
        let slots = model
            .param_ids()
            .into_iter()
            .map(|id| (!model.is_frozen(id)).then(|| vec![0.0; model.tensor(id).len()]))
            .collect::<Vec<_>>();
        Self {
            step: 0,
            first: slots.clone(),
            second: slots,
        }
    }

    fn apply(&mut self, model: &mut LayerStackModel, grads: &Gradients, config: &TrainConfig) {
        self.step += 1;
        let lr = config.learning_rate;
        let decay = config.weight_decay;
        for (slot, id) in model.param_ids().into_iter().enumerate() {
            let Some(g) = &grads.slots()[slot] else {
                continue;
            };
            let params = model.tensor_mut(id);
            match config.optimizer {
                Optimizer::Sgd => {
                    for (p, gi) in params.iter_mut().zip(g) {
                        *p -= lr * (gi + decay * *p);
                    }
                }
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    let m = self.first[slot].as_mut().expect("state for trainable tensor");
                    let v = self.second[slot].as_mut().expect("state for trainable tensor");
                    let c1 = 1.0 - beta1.powi(self.step as i32);
                    let c2 = 1.0 - beta2.powi(self.step as i32);
                    for i in 0..params.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        params[i] -= lr * (m_hat / (v_hat.sqrt() + epsilon) + decay * params[i]);
                    }
                }
            }
        }
    }
}

fn all_finite(model: &LayerStackModel, grads: &Gradients) -> bool {
    grads.ids().all(|id| model.tensor(id).iter().all(|v| v.is_finite()))
}

/// Mini-batch training of the trainable tensors with fresh optimiser state.
/// Frozen tensors are never written.
pub fn train(model: &LayerStackModel, data: &[Example], config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::input("no labeled training data"));
    }
    let mut model = model.clone();
    let mut loss_trace = Vec::new();
    if config.epochs == 0 || model.trainable_parameter_count() == 0 {
        return Ok(Trained { model, loss_trace });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut state = OptimizerState::new(&model);
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (loss, grads) = model.loss_and_grads(&batch)?;
            let step = loss_trace.len();
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            state.apply(&mut model, &grads, config);
            if !all_finite(&model, &grads) {
                return Err(Error::Divergence { step, loss });
            }
            loss_trace.push(loss);
        }
    }
    Ok(Trained { model, loss_trace })
}

/// Trains for up to `config.epochs` epochs, keeping the parameters from the
/// epoch with the best accuracy on `validation`. Stops after `patience`
/// epochs without improvement.
pub fn train_with_early_stopping(
    model: &LayerStackModel,
    data: &[Example],
    validation: &[Example],
    config: &TrainConfig,
    patience: usize,
) -> Result<Trained> {
    config.validate()?;
    if data.is_empty() || validation.is_empty() {
        return Err(Error::input("early stopping needs training and validation data"));
    }
    let mut best_model = model.clone();
    let mut best_acc = metrics::evaluate_accuracy(model, validation)?;
    let mut current = model.clone();
    let mut loss_trace = Vec::new();
    let mut stale = 0;
    for epoch in 0..config.epochs {
        let epoch_config = TrainConfig {
            epochs: 1,
            seed: config.seed.wrapping_add(epoch as u64),
            ..config.clone()
        };
        // Optimiser moments restart each epoch; acceptable for the short
        // decoder-only runs this is used for.
        let trained = train(&current, data, &epoch_config).map_err(|e| match e {
            Error::Divergence { step, loss } => Error::Divergence {
                step: step + loss_trace.len(),
                loss,
            },
            other => other,
        })?;
        loss_trace.extend(trained.loss_trace);
        current = trained.model;
        let acc = metrics::evaluate_accuracy(&current, validation)?;
        if acc > best_acc {
            best_acc = acc;
            best_model = current.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                break;
            }
        }
    }
    Ok(Trained {
        model: best_model,
        loss_trace,
    })
}
