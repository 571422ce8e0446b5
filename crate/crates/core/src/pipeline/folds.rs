use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered source/target domain pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub source: String,
    pub target: String,
}

impl PairKey {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }

    /// `source__target`; also used as the file stem for the pair.
    pub fn id(&self) -> String {
        format!("{}__{}", self.source, self.target)
    }

    /// Parses `S,T` (command line) or `S__T` (pair id).
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .or_else(|| s.split_once("__"))
            .ok_or_else(|| Error::input(format!("pair `{s}` is not of the form SOURCE,TARGET")))?;
        let (a, b) = (a.trim(), b.trim());
        if a.is_empty() || b.is_empty() || a == b {
            return Err(Error::input(format!("pair `{s}` needs two distinct domains")));
        }
        Ok(Self::new(a, b))
    }

    pub fn shares_domain(&self, other: &PairKey) -> bool {
        [&self.source, &self.target]
            .iter()
            .any(|d| **d == other.source || **d == other.target)
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// Every ordered pair of distinct domains, source-major.
pub fn ordered_pairs(domains: &[String]) -> Vec<PairKey> {
    let mut out = Vec::new();
    for s in domains {
        for t in domains {
            if s != t {
                out.push(PairKey::new(s.clone(), t.clone()));
            }
        }
    }
    out
}

/// Shuffles the pairs and deals them round-robin into `count` folds.
pub fn pair_folds(pairs: &[PairKey], count: usize, seed: u64) -> Result<Vec<Vec<PairKey>>> {
    if count < 2 || count > pairs.len() {
        return Err(Error::input(format!(
            "cannot split {} pairs into {count} folds",
            pairs.len()
        )));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); count];
    for (i, p) in shuffled.into_iter().enumerate() {
        folds[i % count].push(p);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

/// Pairs usable to train the selector for `test`: everything outside the
/// test pair's fold that shares neither of its domains.
pub fn training_pairs(folds: &[Vec<PairKey>], test_fold: usize, test: &PairKey) -> Vec<PairKey> {
    let mut out: Vec<PairKey> = folds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != test_fold)
        .flat_map(|(_, f)| f.iter())
        .filter(|p| !p.shares_domain(test))
        .cloned()
        .collect();
    out.sort();
    out
}
