//! Per-source and per-pair stages of the run. Everything a selection needs
//! goes through [`AuditedDomain`] so target-label access is visible.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::AuditedDomain;
use super::config::ExperimentConfig;
use super::folds::PairKey;
use crate::compress::{compress, finetune_candidate, sample_candidate_specs, CandidateSpec};
use crate::effects::{estimate_ate, AteEstimate};
use crate::error::{Error, Result};
use crate::features::{assemble_record, indomain_f1, p_s_given_t, train_domain_classifier, CandidateRecord};
use crate::netcore::{self, evaluate_macro_f1, Dims, LayerStackModel, TrainConfig};

#[derive(Debug, Clone)]
pub struct CandidateModel {
    pub spec: CandidateSpec,
    pub model: LayerStackModel,
    pub f1_source: f64,
    pub ate_source: AteEstimate,
    pub model_path: String,
}

/// A candidate that could not be scored, kept so that failures are
/// reported rather than dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub spec: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SourceArtifacts {
    pub source: String,
    pub base: LayerStackModel,
    pub candidates: Vec<CandidateModel>,
    pub failures: Vec<CandidateFailure>,
}

pub fn base_model_path(out_dir: &Path, source: &str) -> PathBuf {
    out_dir.join("models").join(format!("base_{source}.amoc"))
}

fn candidate_model_rel_path(source: &str, spec: &CandidateSpec) -> String {
    let stem: Vec<String> = spec.removed().iter().map(|l| l.to_string()).collect();
    format!("models/candidates/{source}/{}.amoc", stem.join("-"))
}

/// Trains the task model for one source domain on its labeled split.
pub fn train_base(config: &ExperimentConfig, dims: Dims, source: &AuditedDomain) -> Result<LayerStackModel> {
    let name = source.name();
    let init = LayerStackModel::new(dims, config.seed_for(&format!("init/{name}")))?;
    let train = TrainConfig {
        seed: config.seed_for(&format!("base/{name}")),
        ..config.base.clone()
    };
    let trained = netcore::train(&init, source.labeled_train(), &train)?;
    Ok(trained.model)
}

/// Loads the base model from the output directory when present, otherwise
/// trains and saves it.
pub fn load_or_train_base(config: &ExperimentConfig, dims: Dims, source: &AuditedDomain) -> Result<LayerStackModel> {
    let path = base_model_path(&config.output_dir, source.name());
    if path.exists() {
        let model = netcore::load(&path)?;
        if model.dims() == dims {
            log::info!("reusing base model {}", path.display());
            return Ok(model);
        }
        log::warn!("{} has different dimensions; retraining", path.display());
    }
    let model = train_base(config, dims, source)?;
    netcore::save(&model, &path)?;
    Ok(model)
}

pub fn candidate_specs(config: &ExperimentConfig, source: &str) -> Result<Vec<CandidateSpec>> {
    sample_candidate_specs(
        config.model.depth,
        &config.sizes,
        config.count_per_size,
        config.seed_for(&format!("specs/{source}")),
    )
}

/// Builds, fine-tunes and scores every candidate for one source. Source
/// effects are measured on the source development text.
pub fn prepare_source(
    config: &ExperimentConfig,
    base: &LayerStackModel,
    source: &AuditedDomain,
) -> Result<SourceArtifacts> {
    let name = source.name().to_string();
    let specs = candidate_specs(config, &name)?;
    let labeled = source.labeled_train();
    let held_out = source.dev_labeled();
    let dev_text = source.dev_text();
    let results: Vec<std::result::Result<CandidateModel, CandidateFailure>> = specs
        .par_iter()
        .map(|spec| {
            let fail = |stage: &str, e: Error| CandidateFailure {
                spec: spec.to_string(),
                stage: stage.into(),
                error: e.to_string(),
            };
            let candidate = compress(base, spec).map_err(|e| fail("build", e))?;
            let train = TrainConfig {
                seed: config.seed_for(&format!("candidate/{name}/{spec}")),
                ..config.candidate.clone()
            };
            let model = finetune_candidate(&candidate, labeled, &train)
                .map_err(|e| fail("finetune", e))?
                .model;
            let f1_source = indomain_f1(&model, held_out).map_err(|e| fail("f1_source", e))?;
            let ate_source =
                estimate_ate(base, &model, &dev_text, config.ate_metric, &name).map_err(|e| fail("ate_source", e))?;
            let model_path = if config.save_candidates {
                let rel = candidate_model_rel_path(&name, spec);
                netcore::save(&model, &config.output_dir.join(&rel)).map_err(|e| fail("save", e))?;
                rel
            } else {
                String::new()
            };
            Ok(CandidateModel {
                spec: spec.clone(),
                model,
                f1_source,
                ate_source,
                model_path,
            })
        })
        .collect();
    let mut candidates = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => candidates.push(c),
            Err(f) => {
                log::warn!("{name}: candidate {} failed at {}: {}", f.spec, f.stage, f.error);
                failures.push(f);
            }
        }
    }
    Ok(SourceArtifacts {
        source: name,
        base: base.clone(),
        candidates,
        failures,
    })
}

#[derive(Debug, Clone)]
pub struct PairFeatures {
    pub pair: PairKey,
    pub p_s_given_t: f64,
    /// One per successful candidate, in candidate order, without target F1.
    pub records: Vec<CandidateRecord>,
    pub failures: Vec<CandidateFailure>,
    pub classifier_seed: u64,
}

/// Label-free features for every candidate of `artifacts` on a target
/// domain: the domain classifier is trained on the two unlabeled pools,
/// and P(S|T) and target effects use the target development text.
pub fn pair_features(
    config: &ExperimentConfig,
    artifacts: &SourceArtifacts,
    source: &AuditedDomain,
    target: &AuditedDomain,
) -> Result<PairFeatures> {
    let pair = PairKey::new(source.name(), target.name());
    if artifacts.source != source.name() {
        return Err(Error::input(format!(
            "artifacts belong to {}, not {}",
            artifacts.source,
            source.name()
        )));
    }
    let pair_id = pair.id();
    let classifier_seed = config.seed_for(&format!("classifier/{pair_id}"));
    let mut clf_config = config.domain_classifier.clone();
    clf_config.train.seed = classifier_seed;
    let classifier = train_domain_classifier(
        &source.unlabeled_text(),
        &target.unlabeled_text(),
        &artifacts.base,
        &clf_config,
    )?;
    let target_text = target.dev_text();
    let p = p_s_given_t(&classifier, &target_text)?;

    let results: Vec<std::result::Result<CandidateRecord, CandidateFailure>> = artifacts
        .candidates
        .par_iter()
        .map(|c| {
            let ate_t = estimate_ate(
                &artifacts.base,
                &c.model,
                &target_text,
                config.ate_metric,
                target.name(),
            )
            .map_err(|e| CandidateFailure {
                spec: c.spec.to_string(),
                stage: "ate_target".into(),
                error: e.to_string(),
            })?;
            let mut record = assemble_record(
                &pair_id,
                &c.spec,
                &c.ate_source,
                &ate_t,
                c.f1_source,
                p,
                &config.sizes,
                None,
            );
            record.model_path = c.model_path.clone();
            Ok(record)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = artifacts.failures.clone();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    if records.is_empty() {
        return Err(Error::input(format!("pair {pair_id} produced no candidate records")));
    }
    Ok(PairFeatures {
        pair,
        p_s_given_t: p,
        records,
        failures,
        classifier_seed,
    })
}

fn candidate_for<'a>(artifacts: &'a SourceArtifacts, spec: &CandidateSpec) -> Result<&'a CandidateModel> {
    artifacts
        .candidates
        .iter()
        .find(|c| &c.spec == spec)
        .ok_or_else(|| Error::input(format!("no candidate {spec} for source {}", artifacts.source)))
}

/// Fills `target_f1` from the labeled target development split; this is
/// the regression response for training pairs.
pub fn attach_target_f1(
    records: &mut [CandidateRecord],
    artifacts: &SourceArtifacts,
    target: &AuditedDomain,
) -> Result<()> {
    let dev = target.dev_labeled();
    let scores = records
        .par_iter()
        .map(|r| evaluate_macro_f1(&candidate_for(artifacts, &r.spec)?.model, dev))
        .collect::<Result<Vec<f64>>>()?;
    for (r, f1) in records.iter_mut().zip(scores) {
        r.target_f1 = Some(f1);
    }
    Ok(())
}

/// Target test macro F1 of every scored candidate, in `specs` order. Only
/// evaluation code calls this.
pub fn oracle_test_f1(
    artifacts: &SourceArtifacts,
    specs: &[CandidateSpec],
    target: &AuditedDomain,
) -> Result<Vec<f64>> {
    let test = target.test_labeled();
    specs
        .par_iter()
        .map(|s| evaluate_macro_f1(&candidate_for(artifacts, s)?.model, test))
        .collect()
}
