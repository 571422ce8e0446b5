//! Candidate construction by layer removal.
//!
//! Removing a set of encoder layers splits the stack into maximal runs of
//! surviving layers. Each run is wired to the next one (the last layer of a
//! run feeds the first layer of the following run), and only the layers on
//! the input side of those new connections are fine-tuned, together with the
//! decoder. When layer 1 is removed the embedding feeds the first surviving
//! layer and is fine-tuned; when the final layer is removed the new last
//! layer feeds the decoder and is fine-tuned.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{train, Example, LayerStackModel, ParamId, TrainConfig, Trained};

/// A removed-layer set, 1-based and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CandidateSpec {
    removed: Vec<usize>,
}

impl CandidateSpec {
    /// Sorts and deduplicates `removed`. Depth checks happen in
    /// [`CandidateSpec::validate`].
    pub fn new(removed: impl IntoIterator<Item = usize>) -> Result<Self> {
        let removed: Vec<usize> = removed.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if removed.is_empty() {
            return Err(Error::input("a candidate must remove at least one layer"));
        }
        if removed[0] == 0 {
            return Err(Error::input("layer indices are 1-based"));
        }
        Ok(Self { removed })
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.removed.iter().any(|&l| l > depth) {
            return Err(Error::input(format!("{self} references a layer beyond depth {depth}")));
        }
        if self.removed.len() >= depth {
            return Err(Error::input(format!(
                "{self} removes every layer of a {depth}-layer stack"
            )));
        }
        Ok(())
    }

    pub fn removed(&self) -> &[usize] {
        &self.removed
    }

    pub fn size(&self) -> usize {
        self.removed.len()
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.removed.binary_search(&layer).is_ok()
    }

    /// Parses the JSON array form, e.g. `[2,3,7]`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<usize> =
            serde_json::from_str(s.trim()).map_err(|e| Error::input(format!("bad candidate spec `{s}`: {e}")))?;
        Self::new(v)
    }
}

impl TryFrom<Vec<usize>> for CandidateSpec {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CandidateSpec> for Vec<usize> {
    fn from(s: CandidateSpec) -> Self {
        s.removed
    }
}

impl fmt::Display for CandidateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, l) in self.removed.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconnectionPlan {
    pub depth: usize,
    /// Maximal runs of consecutive surviving layers, in order.
    pub runs: Vec<Vec<usize>>,
    /// `(predecessor, successor)` for every new connection inside the stack.
    pub junctions: Vec<(usize, usize)>,
    pub unfrozen_layers: BTreeSet<usize>,
    pub unfreeze_embedding: bool,
}

pub fn plan_reconnection(spec: &CandidateSpec, depth: usize) -> Result<ReconnectionPlan> {
    spec.validate(depth)?;
    let mut runs: Vec<Vec<usize>> = Vec::new();
    let mut previous_kept = false;
    for layer in 1..=depth {
        if spec.contains(layer) {
            previous_kept = false;
            continue;
        }
        if previous_kept {
            runs.last_mut().expect("open run").push(layer);
        } else {
            runs.push(vec![layer]);
        }
        previous_kept = true;
    }
    let junctions: Vec<(usize, usize)> = runs
        .windows(2)
        .map(|w| (*w[0].last().expect("nonempty run"), w[1][0]))
        .collect();
    let mut unfrozen_layers: BTreeSet<usize> = junctions.iter().map(|&(p, _)| p).collect();
    if spec.contains(depth) {
        let last = *runs.last().and_then(|r| r.last()).expect("at least one survivor");
        unfrozen_layers.insert(last);
    }
    Ok(ReconnectionPlan {
        depth,
        runs,
        junctions,
        unfrozen_layers,
        unfreeze_embedding: spec.contains(1),
    })
}

/// Copies the surviving layers of `base`, re-initialises layer attention
/// uniformly over them, and sets the freeze mask from `plan`.
pub fn build_candidate(
    base: &LayerStackModel,
    spec: &CandidateSpec,
    plan: &ReconnectionPlan,
) -> Result<LayerStackModel> {
    let depth = base.dims().depth;
    if base.active_layers() != (1..=depth).collect::<Vec<_>>() {
        return Err(Error::input("base model must be uncompressed"));
    }
    let expected = plan_reconnection(spec, depth)?;
    if &expected != plan {
        return Err(Error::Internal(format!("reconnection plan does not match {spec}")));
    }
    let mut candidate = base.clone();
    candidate.layers.retain(|l| !spec.contains(l.index));
    candidate.attention = vec![0.0; candidate.layers.len()];
    candidate.frozen = vec![true; 4 + 2 * candidate.layers.len()];

    candidate.set_frozen(ParamId::Embedding, !plan.unfreeze_embedding);
    for pos in 0..candidate.layers.len() {
        if plan.unfrozen_layers.contains(&candidate.layers[pos].index) {
            candidate.set_frozen(ParamId::LayerWeight(pos), false);
            candidate.set_frozen(ParamId::LayerBias(pos), false);
        }
    }
    for id in [ParamId::Attention, ParamId::HeadWeight, ParamId::HeadBias] {
        candidate.set_frozen(id, false);
    }
    Ok(candidate)
}

/// Plan and build in one step.
pub fn compress(base: &LayerStackModel, spec: &CandidateSpec) -> Result<LayerStackModel> {
    let plan = plan_reconnection(spec, base.dims().depth)?;
    build_candidate(base, spec, &plan)
}

/// Brief training of the unfrozen junction layers and decoder.
pub fn finetune_candidate(
    candidate: &LayerStackModel,
    labeled_source: &[Example],
    config: &TrainConfig,
) -> Result<Trained> {
    train(candidate, labeled_source, config)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

fn all_subsets(depth: usize, size: usize) -> Vec<CandidateSpec> {
    fn rec(start: usize, depth: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<CandidateSpec>) {
        if left == 0 {
            out.push(CandidateSpec { removed: cur.clone() });
            return;
        }
        for l in start..=depth + 1 - left {
            cur.push(l);
            rec(l + 1, depth, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(1, depth, size, &mut Vec::new(), &mut out);
    out
}

/// `count` distinct removal sets per size, in `sizes` order. A size with at
/// most `count` possible subsets is enumerated exhaustively.
pub fn sample_candidate_specs(depth: usize, sizes: &[usize], count: usize, seed: u64) -> Result<Vec<CandidateSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &size in sizes {
        if size == 0 || size >= depth {
            return Err(Error::input(format!(
                "cannot remove {size} layers from a {depth}-layer stack"
            )));
        }
        if binomial(depth, size) <= count as u128 {
            out.extend(all_subsets(depth, size));
            continue;
        }
        let mut seen = BTreeSet::new();
        while seen.len() < count {
            let mut picked: Vec<usize> = sample(&mut rng, depth, size).into_iter().map(|i| i + 1).collect();
            picked.sort_unstable();
            if seen.insert(picked.clone()) {
                out.push(CandidateSpec { removed: picked });
            }
        }
    }
    Ok(out)
}
