//! JSONL corpora: one `{"text": .., "label": .., "domain": ..}` object per
//! line. Unlabeled lines carry `"label": null`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};
use crate::netcore::{Example, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub text: String,
    pub label: Option<String>,
    #[serde(default)]
    pub domain: String,
}

/// Whitespace tokenizer with a fixed word list; id 0 is the OOV bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const OOV: &'static str = "<unk>";

    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![Self::OOV.to_string()];
        all.extend(words);
        let index = all.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
        Self { words: all, index }
    }

    /// Word list for synthetic corpora: id `i` is spelled `w<i>`.
    pub fn synthetic(size: usize) -> Self {
        Self::from_words((1..size).map(|i| format!("w{i}")))
    }

    /// Most frequent words first (ties alphabetical), capped so that the
    /// vocabulary including the OOV slot has at most `max_size` entries.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(w, _)| *w != Self::OOV).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size.saturating_sub(1));
        Self::from_words(ranked.into_iter().map(|(w, _)| w.to_string()))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn rebuild_index(&mut self) {
        if self.index.is_empty() {
            self.index = self
                .words
                .iter()
                .enumerate()
                .map(|(i, w)| (w.clone(), i as TokenId))
                .collect();
        }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| self.index.get(w).copied().unwrap_or(0))
            .collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.words.get(t as usize).map(String::as_str).unwrap_or(Self::OOV))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        vocab.rebuild_index();
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("vocabulary serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Label names in class-index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlSchema {
    pub label_space: Vec<String>,
}

impl JsonlSchema {
    pub fn binary() -> Self {
        Self {
            label_space: vec!["0".into(), "1".into()],
        }
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_space.iter().position(|l| l == name)
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<JsonlRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads one domain file. Labeled lines land in `labeled_train`, unlabeled
/// ones in `unlabeled`; call [`DomainDataset::from_pool`] or
/// [`super::split`] to carve out development and test splits.
pub fn load_jsonl(path: &Path, schema: &JsonlSchema, vocab: &Vocabulary) -> Result<DomainDataset> {
    let records = read_jsonl(path)?;
    let fallback = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if records.is_empty() {
        log::warn!("{} contains no examples", path.display());
        return Ok(DomainDataset {
            name: fallback,
            ..Default::default()
        });
    }
    let name = if records[0].domain.is_empty() {
        fallback
    } else {
        records[0].domain.clone()
    };
    let mut dataset = DomainDataset {
        name,
        ..Default::default()
    };
    for (i, rec) in records.iter().enumerate() {
        let mut tokens = vocab.encode(&rec.text);
        if tokens.is_empty() {
            // An empty text still needs one token for pooling.
            tokens.push(0);
        }
        match &rec.label {
            Some(label) => {
                let idx = schema.label_index(label).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("label `{label}` not in label space {:?}", schema.label_space),
                })?;
                dataset.labeled_train.push(Example::labeled(tokens, idx));
            }
            None => dataset.unlabeled.push(Example::unlabeled(tokens)),
        }
    }
    Ok(dataset)
}

/// Writes every split of `dataset` in the shared JSONL schema; labeled
/// splits first, unlabeled text last.
pub fn write_jsonl(dataset: &DomainDataset, schema: &JsonlSchema, vocab: &Vocabulary, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let labeled = dataset
        .labeled_train
        .iter()
        .chain(&dataset.held_out)
        .chain(&dataset.test);
    for x in labeled.chain(&dataset.unlabeled) {
        let label = match x.label {
            Some(l) => Some(
                schema
                    .label_space
                    .get(l)
                    .cloned()
                    .ok_or_else(|| Error::input(format!("label {l} outside label space")))?,
            ),
            None => None,
        };
        let rec = JsonlRecord {
            text: vocab.decode(&x.tokens),
            label,
            domain: dataset.name.clone(),
        };
        serde_json::to_writer(&mut w, &rec).expect("record serializes");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
