//! Synthetic multi-domain text.
//!
//! Token ids `1..vocab` are carved into a shared region and `topics` topic
//! blocks. Every region holds a few class-indicative tokens per class plus
//! background tokens. For domain `d` and class `c`:
//!
//! ```text
//! P(token | d, c) = (1 - s) * shared_c + s * sum_t w[d][t] * topic_{t,c}
//! ```
//!
//! where `s` is the shift strength and `w[d]` is a per-domain mixture over
//! topic blocks (Gamma-normalised Dirichlet draw, or one-hot on a private
//! block when `disjoint_supports` is set). At `s = 0` all domains coincide;
//! the pairwise distance between domain marginals grows linearly in `s`.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::effects::tv_distance_slices;
use crate::error::{Error, Result};
use crate::netcore::{Example, TokenId};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub unlabeled: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 640,
            dev: 160,
            test: 200,
            unlabeled: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftSpec {
    /// Includes the reserved out-of-vocabulary id 0.
    pub vocab_size: usize,
    pub n_classes: usize,
    pub n_domains: usize,
    pub shift_strength: f64,
    pub label_noise: f64,
    /// Probability mass on class-indicative tokens within each region.
    pub signal: f64,
    /// Number of topic blocks; 0 means one per domain.
    pub topics: usize,
    pub topic_concentration: f64,
    /// Each domain draws only from its own topic block.
    pub disjoint_supports: bool,
    pub min_len: usize,
    pub max_len: usize,
    pub sizes: SplitSizes,
    pub seed: u64,
    /// Optional names; defaults to `domain_<i>`.
    pub domain_names: Vec<String>,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            n_classes: 2,
            n_domains: 5,
            shift_strength: 0.6,
            label_noise: 0.05,
            signal: 0.35,
            topics: 0,
            topic_concentration: 0.5,
            disjoint_supports: false,
            min_len: 5,
            max_len: 30,
            sizes: SplitSizes::default(),
            seed: 0,
            domain_names: Vec::new(),
        }
    }
}

struct Region {
    start: usize,
    len: usize,
    per_class: usize,
}

impl Region {
    /// Distribution over the full vocabulary restricted to this region.
    fn class_distribution(&self, class: usize, n_classes: usize, signal: f64, vocab: usize) -> Vec<f64> {
        let mut p = vec![0.0; vocab];
        let class_block = self.per_class * n_classes;
        let background = self.len - class_block;
        let cls_start = self.start + class * self.per_class;
        for v in &mut p[cls_start..cls_start + self.per_class] {
            *v += signal / self.per_class as f64;
        }
        for v in &mut p[self.start + class_block..self.start + self.len] {
            *v += (1.0 - signal) / background as f64;
        }
        p
    }
}

struct Layout {
    shared: Region,
    topics: Vec<Region>,
}

impl ShiftSpec {
    fn topic_count(&self) -> usize {
        if self.topics == 0 {
            self.n_domains
        } else {
            self.topics
        }
    }

    pub fn domain_name(&self, d: usize) -> String {
        self.domain_names
            .get(d)
            .cloned()
            .unwrap_or_else(|| format!("domain_{d}"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_domains == 0 {
            return Err(Error::input(format!(
                "need at least 2 classes and 1 domain, got {} and {}",
                self.n_classes, self.n_domains
            )));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.shift_strength) || !unit(self.label_noise) || !unit(self.signal) {
            return Err(Error::input(
                "shift_strength, label_noise and signal must lie in [0, 1]",
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::input("invalid sentence length range"));
        }
        if self.disjoint_supports && self.topic_count() < self.n_domains {
            return Err(Error::input(
                "disjoint supports need at least one topic block per domain",
            ));
        }
        if !(self.topic_concentration > 0.0) {
            return Err(Error::input("topic_concentration must be positive"));
        }
        if !self.domain_names.is_empty() && self.domain_names.len() != self.n_domains {
            return Err(Error::input("domain_names length must equal n_domains"));
        }
        self.layout().map(|_| ())
    }

    fn layout(&self) -> Result<Layout> {
        let usable = self.vocab_size.saturating_sub(1);
        let shared_len = usable / 2;
        let topics = self.topic_count();
        let block = (usable - shared_len) / topics;
        let region = |start: usize, len: usize| -> Result<Region> {
            let per_class = len / (5 * self.n_classes);
            if per_class == 0 || len <= per_class * self.n_classes {
                return Err(Error::input(format!(
                    "vocab_size {} too small for {} classes and {topics} topics",
                    self.vocab_size, self.n_classes
                )));
            }
            Ok(Region { start, len, per_class })
        };
        let shared = region(1, shared_len)?;
        let topics = (0..topics)
            .map(|t| region(1 + shared_len + t * block, block))
            .collect::<Result<Vec<_>>>()?;
        Ok(Layout { shared, topics })
    }

    fn topic_weights(&self) -> Vec<Vec<f64>> {
        let topics = self.topic_count();
        if self.disjoint_supports {
            return (0..self.n_domains)
                .map(|d| (0..topics).map(|t| if t == d { 1.0 } else { 0.0 }).collect())
                .collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, "topic-weights"));
        let gamma = Gamma::new(self.topic_concentration, 1.0).expect("positive shape");
        (0..self.n_domains)
            .map(|_| {
                let raw: Vec<f64> = (0..topics).map(|_| gamma.sample(&mut rng).max(1e-300)).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            })
            .collect()
    }

    /// `P(token | domain, class)` for every domain and class.
    pub fn class_distributions(&self) -> Result<Vec<Vec<Vec<f64>>>> {
        self.validate()?;
        let layout = self.layout()?;
        let weights = self.topic_weights();
        let s = self.shift_strength;
        let v = self.vocab_size;
        Ok(weights
            .iter()
            .map(|w| {
                (0..self.n_classes)
                    .map(|c| {
                        let mut p: Vec<f64> = layout
                            .shared
                            .class_distribution(c, self.n_classes, self.signal, v)
                            .into_iter()
                            .map(|x| x * (1.0 - s))
                            .collect();
                        for (topic, &wt) in layout.topics.iter().zip(w) {
                            if wt == 0.0 || s == 0.0 {
                                continue;
                            }
                            let q = topic.class_distribution(c, self.n_classes, self.signal, v);
                            for (pi, qi) in p.iter_mut().zip(q) {
                                *pi += s * wt * qi;
                            }
                        }
                        p
                    })
                    .collect()
            })
            .collect())
    }
}

/// Class-averaged token distribution of each domain.
pub fn domain_token_marginals(spec: &ShiftSpec) -> Result<Vec<Vec<f64>>> {
    Ok(spec
        .class_distributions()?
        .into_iter()
        .map(|per_class| {
            let k = per_class.len() as f64;
            let mut m = vec![0.0; spec.vocab_size];
            for p in per_class {
                for (mi, pi) in m.iter_mut().zip(p) {
                    *mi += pi / k;
                }
            }
            m
        })
        .collect())
}

/// Mean total-variation distance over all unordered pairs of distributions.
pub fn mean_pairwise_tvd(dists: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..dists.len() {
        for j in i + 1..dists.len() {
            total += tv_distance_slices(&dists[i], &dists[j]);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn sample_example(rng: &mut ChaCha8Rng, samplers: &[WeightedIndex<f64>], spec: &ShiftSpec) -> Example {
    let class = rng.random_range(0..spec.n_classes);
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let tokens: Vec<TokenId> = (0..len).map(|_| samplers[class].sample(rng) as TokenId).collect();
    let mut label = class;
    if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
        let shift = rng.random_range(1..spec.n_classes);
        label = (class + shift) % spec.n_classes;
    }
    Example::labeled(tokens, label)
}

/// One dataset per domain, reproducible from `spec.seed`.
pub fn generate(spec: &ShiftSpec) -> Result<Vec<DomainDataset>> {
    let dists = spec.class_distributions()?;
    let sizes = spec.sizes;
    dists
        .iter()
        .enumerate()
        .map(|(d, per_class)| {
            let samplers = per_class
                .iter()
                .map(|p| WeightedIndex::new(p).map_err(|e| Error::Internal(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_index(spec.seed, d as u64));
            let mut draw =
                |n: usize| -> Vec<Example> { (0..n).map(|_| sample_example(&mut rng, &samplers, spec)).collect() };
            let labeled_train = draw(sizes.train);
            let held_out = draw(sizes.dev);
            let test = draw(sizes.test);
            let unlabeled = draw(sizes.unlabeled).iter().map(Example::without_label).collect();
            Ok(DomainDataset {
                name: spec.domain_name(d),
                labeled_train,
                unlabeled,
                held_out,
                test,
            })
        })
        .collect()
}
