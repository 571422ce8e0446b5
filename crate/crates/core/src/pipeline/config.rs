use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{self, DomainDataset, JsonlSchema, ShiftSpec, Vocabulary, DEFAULT_FRACTIONS};
use crate::effects::AteMetric;
use crate::error::{Error, Result};
use crate::features::DomainClassifierConfig;
use crate::netcore::{Dims, TrainConfig};
use crate::regress::DEFAULT_ALPHA;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(ShiftSpec),
    /// One `<domain>.jsonl` file per domain in `dir`.
    Jsonl {
        dir: PathBuf,
        label_space: Vec<String>,
        /// Vocabulary file; built from all domain texts when absent.
        #[serde(default)]
        vocab_path: Option<PathBuf>,
        #[serde(default = "default_max_vocab")]
        max_vocab: usize,
        #[serde(default = "default_fractions")]
        fractions: [f64; 3],
    },
}

fn default_max_vocab() -> usize {
    2000
}

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub hidden: usize,
    pub depth: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self { hidden: 32, depth: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldConfig {
    pub count: usize,
    pub seed: u64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self { count: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub data: DataSource,
    /// Domains to use, in order; empty means every domain in `data`.
    pub domains: Vec<String>,
    pub model: ModelShape,
    pub base: TrainConfig,
    pub candidate: TrainConfig,
    pub domain_classifier: DomainClassifierConfig,
    pub sizes: Vec<usize>,
    pub count_per_size: usize,
    pub folds: FoldConfig,
    pub ate_metric: AteMetric,
    pub alpha: f64,
    pub output_dir: PathBuf,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    /// Write every fine-tuned candidate model to disk.
    pub save_candidates: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            data: DataSource::Synthetic(ShiftSpec::default()),
            domains: Vec::new(),
            model: ModelShape::default(),
            base: TrainConfig {
                epochs: 10,
                ..TrainConfig::default()
            },
            candidate: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            domain_classifier: DomainClassifierConfig::default(),
            sizes: vec![2, 3, 4],
            count_per_size: 20,
            folds: FoldConfig::default(),
            ate_metric: AteMetric::TotalVariation,
            alpha: DEFAULT_ALPHA,
            output_dir: PathBuf::from("amoc-out"),
            jobs: None,
            save_candidates: false,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message,
        };
        let mut config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        if let DataSource::Jsonl { dir, vocab_path, .. } = &mut config.data {
            // Relative data paths are taken relative to the config file.
            let base = path.parent().unwrap_or(Path::new("."));
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
            if let Some(v) = vocab_path.as_mut().filter(|v| v.is_relative()) {
                *v = base.join(&*v);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds.count < 2 {
            return Err(Error::input("fold count must be at least 2"));
        }
        if self.sizes.is_empty() || self.count_per_size == 0 {
            return Err(Error::input(
                "need at least one removal size and one candidate per size",
            ));
        }
        if let Some(&s) = self.sizes.iter().find(|&&s| s == 0 || s >= self.model.depth) {
            return Err(Error::input(format!(
                "removal size {s} impossible for depth {}",
                self.model.depth
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::input("alpha must lie in (0, 1]"));
        }
        if self.jobs == Some(0) {
            return Err(Error::input("jobs must be positive"));
        }
        self.base.validate()?;
        self.candidate.validate()?;
        self.domain_classifier.train.validate()?;
        for name in &self.domains {
            check_domain_name(name)?;
        }
        Ok(())
    }

    /// Seed for a named sub-task, stable across runs and independent of
    /// execution order.
    pub fn seed_for(&self, label: &str) -> u64 {
        seeds::derive(self.seed, label)
    }

    /// Loads every domain and restricts to `self.domains` when given.
    /// Returns the datasets and model dimensions.
    pub fn load_domains(&self) -> Result<(Vec<DomainDataset>, Dims)> {
        let (all, vocab, classes) = match &self.data {
            DataSource::Synthetic(spec) => (datagen::generate(spec)?, spec.vocab_size, spec.n_classes),
            DataSource::Jsonl {
                dir,
                label_space,
                vocab_path,
                max_vocab,
                fractions,
            } => {
                let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                    .map_err(|e| Error::io(dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
                    .collect();
                files.sort();
                if files.is_empty() {
                    return Err(Error::input(format!("no .jsonl files in {}", dir.display())));
                }
                let vocab = match vocab_path {
                    Some(p) => Vocabulary::load(p)?,
                    None => {
                        let mut texts = Vec::new();
                        for f in &files {
                            texts.extend(datagen::read_jsonl(f)?.into_iter().map(|r| r.text));
                        }
                        Vocabulary::build(texts.iter().map(String::as_str), *max_vocab)
                    }
                };
                let schema = JsonlSchema {
                    label_space: label_space.clone(),
                };
                let mut out = Vec::new();
                for f in &files {
                    let raw = datagen::load_jsonl(f, &schema, &vocab)?;
                    let seed = self.seed_for(&format!("split/{}", raw.name));
                    out.push(DomainDataset::from_pool(
                        raw.name,
                        raw.labeled_train,
                        raw.unlabeled,
                        *fractions,
                        seed,
                    )?);
                }
                (out, vocab.len(), label_space.len())
            }
        };
        for d in &all {
            check_domain_name(&d.name)?;
            if let Some(m) = d.max_label().filter(|&m| m >= classes) {
                return Err(Error::input(format!(
                    "domain {} has label {m} outside {classes} classes",
                    d.name
                )));
            }
        }
        let chosen = if self.domains.is_empty() {
            all
        } else {
            self.domains
                .iter()
                .map(|n| {
                    all.iter()
                        .find(|d| &d.name == n)
                        .cloned()
                        .ok_or_else(|| Error::input(format!("unknown domain `{n}`")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        if chosen.len() < 2 {
            return Err(Error::input("need at least two domains"));
        }
        let dims = Dims {
            vocab,
            hidden: self.model.hidden,
            classes,
            depth: self.model.depth,
        };
        dims.validate()?;
        Ok((chosen, dims))
    }
}

/// Domain names appear in file names and in `S,T` pair arguments.
pub fn check_domain_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.contains("__")
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::input(format!(
            "domain name `{name}` must be ASCII letters, digits, '-', '.', or single '_'"
        )))
    }
}
