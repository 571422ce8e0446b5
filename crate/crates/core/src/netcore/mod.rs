//! Differentiable layer-stack classifier and its training loop.

pub mod metrics;
pub mod model;
pub mod serialize;
pub mod train;

pub use metrics::{evaluate_accuracy, evaluate_macro_f1, macro_f1};
pub use model::{Dims, EncoderLayer, Example, Gradients, LayerStackModel, ParamId, ProbDist, TokenId};
pub use serialize::{deserialize, load, save, serialize};
pub use train::{train, train_with_early_stopping, Optimizer, TrainConfig, Trained};
