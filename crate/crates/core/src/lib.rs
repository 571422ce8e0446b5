//! Layer-removal compression of a stacked text classifier, with candidate
//! selection for an unseen target domain.
//!
//! The crate builds compressed variants of a trained [`LayerStackModel`] by
//! removing subsets of encoder layers, measures how much each removal changes
//! the model's predictions (an average treatment effect over unlabeled text),
//! and fits a forward-stepwise linear regression that predicts a variant's
//! target-domain macro F1 from those effects plus a few cheap covariates.

pub mod analysis;
pub mod compress;
pub mod datagen;
pub mod effects;
pub mod error;
pub mod features;
pub mod netcore;
pub mod pipeline;
pub mod regress;
pub mod seeds;

pub use error::{Error, ErrorKind, Result};
pub use netcore::{Example, LayerStackModel, ProbDist};
