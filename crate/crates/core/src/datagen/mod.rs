//! Multi-domain corpora: synthetic generation with controllable shift, JSONL
//! ingestion, and the labeled / unlabeled / held-out splits.

mod jsonl;
mod split;
mod synth;

pub use jsonl::{load_jsonl, read_jsonl, write_jsonl, JsonlRecord, JsonlSchema, Vocabulary};
pub use split::{split, split_sizes, DEFAULT_FRACTIONS};
pub use synth::{domain_token_marginals, generate, mean_pairwise_tvd, ShiftSpec, SplitSizes};

use serde::{Deserialize, Serialize};

use crate::netcore::Example;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DomainDataset {
    pub name: String,
    /// Labeled training data (L).
    pub labeled_train: Vec<Example>,
    /// Extra unlabeled text with no labels attached.
    pub unlabeled: Vec<Example>,
    /// Labeled development split (H), also used unlabeled for effect estimates.
    pub held_out: Vec<Example>,
    /// Labeled test split, consulted only when scoring a selection.
    pub test: Vec<Example>,
}

impl DomainDataset {
    /// Unlabeled view of the training text (U): the training split with
    /// labels stripped, followed by the unlabeled pool.
    pub fn unlabeled_pool(&self) -> Vec<Example> {
        self.labeled_train
            .iter()
            .map(Example::without_label)
            .chain(self.unlabeled.iter().cloned())
            .collect()
    }

    pub fn held_out_unlabeled(&self) -> Vec<Example> {
        self.held_out.iter().map(Example::without_label).collect()
    }

    /// Builds the splits from a labeled pool using `fractions`
    /// (train, dev, test).
    pub fn from_pool(
        name: impl Into<String>,
        labeled: Vec<Example>,
        unlabeled: Vec<Example>,
        fractions: [f64; 3],
        seed: u64,
    ) -> crate::Result<Self> {
        let (labeled_train, held_out, test) = split(&labeled, fractions, seed)?;
        Ok(Self {
            name: name.into(),
            labeled_train,
            unlabeled,
            held_out,
            test,
        })
    }

    pub fn max_label(&self) -> Option<usize> {
        self.labeled_train
            .iter()
            .chain(&self.held_out)
            .chain(&self.test)
            .filter_map(|x| x.label)
            .max()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DomainPair<'a> {
    pub source: &'a DomainDataset,
    pub target: &'a DomainDataset,
}
