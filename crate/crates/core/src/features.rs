//! Regression covariates for each candidate and their CSV persistence.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compress::CandidateSpec;
use crate::effects::{AteEstimate, AteMetric};
use crate::error::{Error, Result};
use crate::netcore::{evaluate_macro_f1, train_with_early_stopping, Example, LayerStackModel, ParamId, TrainConfig};

pub const TERM_F1_S: &str = "f1_s";
pub const TERM_ATE_T: &str = "ate_t";
pub const TERM_ATE_S: &str = "ate_s";
pub const TERM_P_S_T: &str = "p_s_t";
pub const TERM_ATE_T_X_P: &str = "ate_t_x_p_s_t";
pub const TERM_F1_S_X_P: &str = "f1_s_x_p_s_t";

/// Column / term name of the indicator for removing `size` layers.
pub fn size_term(size: usize) -> String {
    format!("ind_size_{size}")
}

/// Label the domain classifier assigns to source-domain text.
pub const SOURCE_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub pair_id: String,
    pub spec: CandidateSpec,
    pub ate_source: f64,
    pub ate_target: f64,
    pub ate_metric: AteMetric,
    pub f1_source: f64,
    pub p_s_given_t: f64,
    /// One flag per non-baseline removal size in the run.
    pub size_indicators: BTreeMap<usize, bool>,
    pub ate_t_x_p_s_t: f64,
    pub f1_s_x_p_s_t: f64,
    /// Target-domain macro F1; absent for pairs whose target labels are
    /// not to be consulted.
    pub target_f1: Option<f64>,
    /// Relative to the run's output directory; empty when not persisted.
    pub model_path: String,
}

impl CandidateRecord {
    /// Value of a named regression term, if this record carries it.
    pub fn feature(&self, term: &str) -> Option<f64> {
        match term {
            TERM_F1_S => Some(self.f1_source),
            TERM_ATE_T => Some(self.ate_target),
            TERM_ATE_S => Some(self.ate_source),
            TERM_P_S_T => Some(self.p_s_given_t),
            TERM_ATE_T_X_P => Some(self.ate_t_x_p_s_t),
            TERM_F1_S_X_P => Some(self.f1_s_x_p_s_t),
            other => {
                let size: usize = other.strip_prefix("ind_size_")?.parse().ok()?;
                self.size_indicators.get(&size).map(|&on| if on { 1.0 } else { 0.0 })
            }
        }
    }

    /// All regression terms in the fixed column order.
    pub fn term_names(&self) -> Vec<String> {
        let mut names: Vec<String> = [
            TERM_F1_S,
            TERM_ATE_T,
            TERM_ATE_S,
            TERM_P_S_T,
            TERM_ATE_T_X_P,
            TERM_F1_S_X_P,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        names.extend(self.size_indicators.keys().map(|&s| size_term(s)));
        names
    }
}

pub fn indomain_f1(candidate: &LayerStackModel, held_out_source: &[Example]) -> Result<f64> {
    if held_out_source.is_empty() {
        return Err(Error::input("empty held-out source set"));
    }
    evaluate_macro_f1(candidate, held_out_source)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainClassifierConfig {
    pub train: TrainConfig,
    pub patience: usize,
    /// Fraction of the balanced pool held out for early stopping.
    pub holdout_fraction: f64,
    /// Fine-tune the encoder too instead of only the fresh decoder.
    pub train_encoder: bool,
}

impl Default for DomainClassifierConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 25,
                learning_rate: 1e-2,
                ..TrainConfig::default()
            },
            patience: 3,
            holdout_fraction: 0.2,
            train_encoder: true,
        }
    }
}

/// Binary source-vs-target classifier on a copy of `encoder` with a fresh
/// decoder. Source examples are class [`SOURCE_CLASS`]. Both corpora are
/// subsampled to the same size so that the prior is balanced.
pub fn train_domain_classifier(
    unlabeled_source: &[Example],
    unlabeled_target: &[Example],
    encoder: &LayerStackModel,
    config: &DomainClassifierConfig,
) -> Result<LayerStackModel> {
    if unlabeled_source.is_empty() || unlabeled_target.is_empty() {
        return Err(Error::input("domain classifier needs text from both domains"));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(Error::input("holdout_fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let n = unlabeled_source.len().min(unlabeled_target.len());
    let mut take = |xs: &[Example], label: usize| -> Vec<Example> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.shuffle(&mut rng);
        idx[..n]
            .iter()
            .map(|&i| Example {
                tokens: xs[i].tokens.clone(),
                label: Some(label),
                positions: None,
            })
            .collect()
    };
    let mut pool = take(unlabeled_source, SOURCE_CLASS);
    pool.extend(take(unlabeled_target, 1 - SOURCE_CLASS));
    pool.shuffle(&mut rng);
    let n_val = ((pool.len() as f64) * config.holdout_fraction).round() as usize;
    let n_val = n_val.clamp(1, pool.len() - 1);
    let (validation, train) = pool.split_at(n_val);

    let mut model = encoder.clone();
    model.reset_decoder(2, config.train.seed ^ 0xD0_4A17)?;
    if config.train_encoder {
        model.unfreeze_all();
    } else {
        model.freeze_all();
        for id in [ParamId::Attention, ParamId::HeadWeight, ParamId::HeadBias] {
            model.set_frozen(id, false);
        }
    }
    Ok(train_with_early_stopping(&model, train, validation, &config.train, config.patience)?.model)
}

/// Mean probability the classifier assigns to the source domain over
/// target text.
pub fn p_s_given_t(classifier: &LayerStackModel, target_dev: &[Example]) -> Result<f64> {
    if target_dev.is_empty() {
        return Err(Error::input("empty target set for P(S|T)"));
    }
    if classifier.dims().classes != 2 {
        return Err(Error::input("domain classifier must be binary"));
    }
    let mut total = 0.0;
    for x in target_dev {
        total += classifier.classify(x)?.as_slice()[SOURCE_CLASS];
    }
    Ok((total / target_dev.len() as f64).clamp(0.0, 1.0))
}

/// Combines per-candidate measurements into a record. The smallest size in
/// `sizes_in_run` is the baseline and has no indicator.
#[allow(clippy::too_many_arguments)]
pub fn assemble_record(
    pair_id: &str,
    spec: &CandidateSpec,
    ate_source: &AteEstimate,
    ate_target: &AteEstimate,
    f1_source: f64,
    p_s_given_t: f64,
    sizes_in_run: &[usize],
    target_f1: Option<f64>,
) -> CandidateRecord {
    let baseline = sizes_in_run.iter().copied().min();
    let size_indicators = sizes_in_run
        .iter()
        .copied()
        .filter(|&s| Some(s) != baseline)
        .map(|s| (s, spec.size() == s))
        .collect();
    CandidateRecord {
        pair_id: pair_id.to_string(),
        spec: spec.clone(),
        ate_source: ate_source.value,
        ate_target: ate_target.value,
        ate_metric: ate_source.metric,
        f1_source,
        p_s_given_t,
        size_indicators,
        ate_t_x_p_s_t: ate_target.value * p_s_given_t,
        f1_s_x_p_s_t: f1_source * p_s_given_t,
        target_f1,
        model_path: String::new(),
    }
}

const LEADING: [&str; 6] = ["pair_id", "spec", "ate_s", "ate_t", "f1_s", "p_s_t"];
const TRAILING: [&str; 5] = ["ate_t_x_p_s_t", "f1_s_x_p_s_t", "target_f1", "ate_metric", "model_path"];

/// Writes records with columns `pair_id, spec, ate_s, ate_t, f1_s, p_s_t,
/// ind_size_*, ate_t_x_p_s_t, f1_s_x_p_s_t, target_f1, ate_metric,
/// model_path`. All records must share one set of size indicators.
pub fn write_records(path: &Path, records: &[CandidateRecord]) -> Result<()> {
    let sizes: Vec<usize> = records
        .first()
        .map(|r| r.size_indicators.keys().copied().collect())
        .unwrap_or_default();
    if records
        .iter()
        .any(|r| r.size_indicators.keys().copied().collect::<Vec<_>>() != sizes)
    {
        return Err(Error::input("records disagree on removal-size indicators"));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<String> = LEADING.iter().map(|s| s.to_string()).collect();
    header.extend(sizes.iter().map(|&s| size_term(s)));
    header.extend(TRAILING.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in records {
        let mut row = vec![
            r.pair_id.clone(),
            r.spec.to_string(),
            r.ate_source.to_string(),
            r.ate_target.to_string(),
            r.f1_source.to_string(),
            r.p_s_given_t.to_string(),
        ];
        row.extend(
            r.size_indicators
                .values()
                .map(|&on| if on { "1" } else { "0" }.to_string()),
        );
        row.push(r.ate_t_x_p_s_t.to_string());
        row.push(r.f1_s_x_p_s_t.to_string());
        row.push(r.target_f1.map(|v| v.to_string()).unwrap_or_default());
        row.push(r.ate_metric.to_string());
        row.push(r.model_path.clone());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn read_records(path: &Path) -> Result<Vec<CandidateRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let n_sizes = header
        .len()
        .checked_sub(LEADING.len() + TRAILING.len())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "too few columns".into(),
        })?;
    let bad_header = || Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: format!("unexpected header {header:?}"),
    };
    if header[..LEADING.len()] != LEADING || header[LEADING.len() + n_sizes..] != TRAILING {
        return Err(bad_header());
    }
    let sizes = header[LEADING.len()..LEADING.len() + n_sizes]
        .iter()
        .map(|h| h.strip_prefix("ind_size_").and_then(|s| s.parse::<usize>().ok()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(bad_header)?;

    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let num = |idx: usize| -> Result<f64> {
            row[idx]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("column {}: {e}", header[idx])))
        };
        let spec = CandidateSpec::parse(&row[1]).map_err(|e| parse_err(e.to_string()))?;
        let mut size_indicators = BTreeMap::new();
        for (k, &s) in sizes.iter().enumerate() {
            let on = match &row[LEADING.len() + k] {
                "1" => true,
                "0" => false,
                other => return Err(parse_err(format!("indicator value `{other}`"))),
            };
            size_indicators.insert(s, on);
        }
        let t = LEADING.len() + n_sizes;
        let target_f1 = if row[t + 2].is_empty() { None } else { Some(num(t + 2)?) };
        out.push(CandidateRecord {
            pair_id: row[0].to_string(),
            spec,
            ate_source: num(2)?,
            ate_target: num(3)?,
            f1_source: num(4)?,
            p_s_given_t: num(5)?,
            size_indicators,
            ate_t_x_p_s_t: num(t)?,
            f1_s_x_p_s_t: num(t + 1)?,
            target_f1,
            ate_metric: row[t + 3].parse().map_err(|e: Error| parse_err(e.to_string()))?,
            model_path: row[t + 4].to_string(),
        });
    }
    Ok(out)
}
