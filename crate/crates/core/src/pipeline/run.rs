//! End-to-end run with on-disk artifacts and pair-level resume.
//!
//! Output layout, relative to the configured output directory:
//!
//! ```text
//! models/base_<S>.amoc
//! models/candidates/<S>/<layers>.amoc     only with save_candidates
//! pairs/<S>__<T>.records.csv              features + target dev F1
//! pairs/<S>__<T>.oracle.csv               target test F1 per candidate
//! pairs/<S>__<T>.json                     pair metadata; written last
//! selectors/selector_<i>.json
//! analysis/{frequency.csv, importance.csv, layers.json}
//! manifest.json
//! manifest.timings.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::audit::{Access, AuditedDomain};
use super::config::ExperimentConfig;
use super::folds::{ordered_pairs, pair_folds, training_pairs, PairKey};
use super::selection::{evaluate_selection, fit_selector, naive_ranking, rank_candidates, read_oracle, write_oracle};
use super::steps::{
    attach_target_f1, base_model_path, load_or_train_base, oracle_test_f1, pair_features, prepare_source,
    CandidateFailure,
};
use crate::analysis::{frequency_table, layer_report, write_frequency_csv, write_importance_csv};
use crate::compress::CandidateSpec;
use crate::datagen::DomainDataset;
use crate::error::{Error, Result};
use crate::features::{read_records, write_records, CandidateRecord};
use crate::netcore;
use crate::regress::RegressionModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSeeds {
    pub base_init: u64,
    pub base_train: u64,
    pub specs: u64,
    pub classifier: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub pair_id: String,
    pub source: String,
    pub target: String,
    pub base_model_path: String,
    pub records_path: String,
    pub oracle_path: String,
    pub seeds: PairSeeds,
    pub p_s_given_t: f64,
    pub n_records: usize,
    pub failures: Vec<CandidateFailure>,
    /// Accesses made while computing the label-free selection features.
    pub feature_access_log: Vec<Access>,
    pub feature_label_reads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorEntry {
    pub path: String,
    pub training_pairs: Vec<String>,
    pub terms: Vec<String>,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSelection {
    pub pair_id: String,
    pub fold: usize,
    pub selector_path: String,
    pub chosen: CandidateSpec,
    pub predicted: f64,
    pub chosen_f1: f64,
    pub best: CandidateSpec,
    pub best_f1: f64,
    pub regret: f64,
    pub rank: usize,
    pub n_candidates: usize,
    /// Rank within the best quarter of candidates.
    pub top_quartile: bool,
    pub naive_chosen: CandidateSpec,
    pub naive_regret: f64,
    pub naive_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_pairs: usize,
    pub n_records: usize,
    pub n_failures: usize,
    pub top_quartile_rate: f64,
    pub mean_regret: f64,
    pub naive_mean_regret: f64,
    pub mean_selector_adjusted_r2: f64,
    pub min_selector_adjusted_r2: f64,
    pub layer_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    /// The run configuration with machine-specific fields (output
    /// directory, job count) cleared.
    pub config: ExperimentConfig,
    pub domains: Vec<String>,
    pub pairs: Vec<PairMeta>,
    pub folds: Vec<Vec<String>>,
    pub selectors: Vec<SelectorEntry>,
    pub selections: Vec<PairSelection>,
    pub analysis_files: Vec<String>,
    pub summary: RunSummary,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
    }

    /// Checks that every referenced file exists and parses.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for p in &self.pairs {
            netcore::load(&out_dir.join(&p.base_model_path))?;
            let records = read_records(&out_dir.join(&p.records_path))?;
            if records.len() != p.n_records {
                return Err(Error::Format(format!("{}: record count changed", p.records_path)));
            }
            read_oracle(&out_dir.join(&p.oracle_path))?;
            for r in records.iter().filter(|r| !r.model_path.is_empty()) {
                netcore::load(&out_dir.join(&r.model_path))?;
            }
        }
        for s in &self.selectors {
            RegressionModel::load(&out_dir.join(&s.path))?;
        }
        for f in &self.analysis_files {
            let path = out_dir.join(f);
            if !path.is_file() {
                return Err(Error::Format(format!("missing analysis file {}", path.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Seconds per stage label; only stages executed in this invocation.
    pub seconds: BTreeMap<String, f64>,
    pub resumed_pairs: Vec<String>,
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub timings: Timings,
}

pub fn pair_file(out_dir: &Path, pair: &PairKey, suffix: &str) -> PathBuf {
    out_dir.join("pairs").join(format!("{}.{suffix}", pair.id()))
}

fn rel(out_dir: &Path, path: &Path) -> String {
    path.strip_prefix(out_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pair_done(out_dir: &Path, pair: &PairKey) -> bool {
    ["json", "records.csv", "oracle.csv"]
        .iter()
        .all(|s| pair_file(out_dir, pair, s).is_file())
}

/// Full run: every ordered pair, fold-wise selector fits, selection and
/// scoring on held-out pairs, and layer analyses. Pairs whose files already
/// exist in the output directory are not recomputed.
pub fn run_all(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    pool.install(|| run_all_inner(config))
}

fn run_all_inner(config: &ExperimentConfig) -> Result<RunOutcome> {
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let (domains, dims) = config.load_domains()?;
    let names: Vec<String> = domains.iter().map(|d| d.name.clone()).collect();
    let pairs = ordered_pairs(&names);
    let mut timings = Timings::default();

    for source in &domains {
        let todo: Vec<&DomainDataset> = domains
            .iter()
            .filter(|t| t.name != source.name && !pair_done(&out, &PairKey::new(&source.name, &t.name)))
            .collect();
        for t in domains.iter().filter(|t| t.name != source.name) {
            if !todo.iter().any(|d| d.name == t.name) {
                timings.resumed_pairs.push(PairKey::new(&source.name, &t.name).id());
            }
        }
        if todo.is_empty() {
            continue;
        }
        let started = Instant::now();
        let audited_source = AuditedDomain::new(source);
        let base = load_or_train_base(config, dims, &audited_source)?;
        let artifacts = prepare_source(config, &base, &audited_source)?;
        timings
            .seconds
            .insert(format!("source/{}", source.name), started.elapsed().as_secs_f64());
        for target in todo {
            let started = Instant::now();
            let pair = PairKey::new(&source.name, &target.name);
            run_pair(config, &artifacts, source, target)?;
            timings
                .seconds
                .insert(format!("pair/{}", pair.id()), started.elapsed().as_secs_f64());
        }
    }

    let started = Instant::now();
    let manifest = assemble_manifest(config, &names, &pairs)?;
    timings
        .seconds
        .insert("selection".into(), started.elapsed().as_secs_f64());
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(&out.join("manifest.timings.json"), &timings)?;
    Ok(RunOutcome { manifest, timings })
}

/// Features, target dev F1 and oracle test F1 for one pair, persisted
/// under `pairs/`.
fn run_pair(
    config: &ExperimentConfig,
    artifacts: &super::steps::SourceArtifacts,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<PairMeta> {
    let out = &config.output_dir;
    let pair = PairKey::new(&source.name, &target.name);
    let audited_source = AuditedDomain::new(source);
    // Fresh view for the label-free stage so its log is exactly what a
    // selection would touch.
    let feature_view = AuditedDomain::new(target);
    let features = pair_features(config, artifacts, &audited_source, &feature_view)?;
    let feature_access_log = feature_view.log();
    let feature_label_reads = feature_view.label_reads();

    let mut records = features.records;
    let scoring_view = AuditedDomain::new(target);
    attach_target_f1(&mut records, artifacts, &scoring_view)?;
    let specs: Vec<CandidateSpec> = records.iter().map(|r| r.spec.clone()).collect();
    let test_f1 = oracle_test_f1(artifacts, &specs, &scoring_view)?;
    let mut oracle: Vec<(CandidateSpec, f64)> = specs.into_iter().zip(test_f1).collect();

    records.sort_by(|a, b| a.spec.cmp(&b.spec));
    oracle.sort_by(|a, b| a.0.cmp(&b.0));
    let records_path = pair_file(out, &pair, "records.csv");
    let oracle_path = pair_file(out, &pair, "oracle.csv");
    write_records(&records_path, &records)?;
    write_oracle(&oracle_path, &pair.id(), &oracle)?;
    let meta = PairMeta {
        pair_id: pair.id(),
        source: pair.source.clone(),
        target: pair.target.clone(),
        base_model_path: rel(out, &base_model_path(out, &pair.source)),
        records_path: rel(out, &records_path),
        oracle_path: rel(out, &oracle_path),
        seeds: PairSeeds {
            base_init: config.seed_for(&format!("init/{}", pair.source)),
            base_train: config.seed_for(&format!("base/{}", pair.source)),
            specs: config.seed_for(&format!("specs/{}", pair.source)),
            classifier: features.classifier_seed,
        },
        p_s_given_t: features.p_s_given_t,
        n_records: records.len(),
        failures: features.failures,
        feature_access_log,
        feature_label_reads,
    };
    write_json(&pair_file(out, &pair, "json"), &meta)?;
    Ok(meta)
}

struct PairData {
    meta: PairMeta,
    records: Vec<CandidateRecord>,
    oracle: Vec<(CandidateSpec, f64)>,
}

fn load_pair(out: &Path, pair: &PairKey) -> Result<PairData> {
    let path = pair_file(out, pair, "json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: PairMeta = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let records = read_records(&out.join(&meta.records_path))?;
    let oracle = read_oracle(&out.join(&meta.oracle_path))?
        .into_iter()
        .map(|(_, s, f)| (s, f))
        .collect();
    Ok(PairData { meta, records, oracle })
}

fn assemble_manifest(config: &ExperimentConfig, names: &[String], pairs: &[PairKey]) -> Result<RunManifest> {
    let out = &config.output_dir;
    let data: BTreeMap<PairKey, PairData> = pairs
        .iter()
        .map(|p| Ok((p.clone(), load_pair(out, p)?)))
        .collect::<Result<_>>()?;
    let folds = pair_folds(pairs, config.folds.count, config.folds.seed)?;

    let mut selectors: Vec<SelectorEntry> = Vec::new();
    let mut fitted: BTreeMap<Vec<PairKey>, (usize, RegressionModel)> = BTreeMap::new();
    let mut selections = Vec::new();
    for (fold, members) in folds.iter().enumerate() {
        for test in members {
            let train = training_pairs(&folds, fold, test);
            if train.is_empty() {
                return Err(Error::input(format!("no domain-disjoint training pairs for {test}")));
            }
            if !fitted.contains_key(&train) {
                let records: Vec<CandidateRecord> =
                    train.iter().flat_map(|p| data[p].records.iter().cloned()).collect();
                let model = fit_selector(&records, config.alpha)?;
                let path = format!("selectors/selector_{}.json", selectors.len());
                model.save(&out.join(&path))?;
                selectors.push(SelectorEntry {
                    path,
                    training_pairs: train.iter().map(PairKey::id).collect(),
                    terms: model.selected_terms().iter().map(|s| s.to_string()).collect(),
                    r2: model.r2,
                    adjusted_r2: model.adjusted_r2,
                    n: model.n,
                });
                fitted.insert(train.clone(), (selectors.len() - 1, model));
            }
            let (idx, selector) = &fitted[&train];
            let d = &data[test];
            let unlabeled: Vec<CandidateRecord> = d
                .records
                .iter()
                .map(|r| CandidateRecord {
                    target_f1: None,
                    ..r.clone()
                })
                .collect();
            let ranked = rank_candidates(selector, &unlabeled)?;
            let report = evaluate_selection(&ranked[0].spec, &d.oracle)?;
            let naive = naive_ranking(&unlabeled);
            let naive_report = evaluate_selection(&naive[0].spec, &d.oracle)?;
            selections.push(PairSelection {
                pair_id: test.id(),
                fold,
                selector_path: selectors[*idx].path.clone(),
                chosen: report.chosen,
                predicted: ranked[0].predicted,
                chosen_f1: report.chosen_f1,
                best: report.best,
                best_f1: report.best_f1,
                regret: report.regret,
                rank: report.rank,
                n_candidates: report.n_candidates,
                top_quartile: (report.rank as f64) <= 0.25 * report.n_candidates as f64,
                naive_chosen: naive_report.chosen,
                naive_regret: naive_report.regret,
                naive_rank: naive_report.rank,
            });
        }
    }
    selections.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    // Layer analyses over oracle-best candidates.
    let best_specs: Vec<CandidateSpec> = selections.iter().map(|s| s.best.clone()).collect();
    let all_records: Vec<CandidateRecord> = data.values().flat_map(|d| d.records.iter().cloned()).collect();
    let report = layer_report(&best_specs, &all_records, config.model.depth)?;
    let analysis_files = vec![
        "analysis/frequency.csv".to_string(),
        "analysis/importance.csv".to_string(),
        "analysis/layers.json".to_string(),
    ];
    write_frequency_csv(
        &out.join(&analysis_files[0]),
        &frequency_table(&best_specs, config.model.depth)?,
    )?;
    write_importance_csv(&out.join(&analysis_files[1]), &report.importance)?;
    write_json(&out.join(&analysis_files[2]), &report)?;

    let n = selections.len() as f64;
    let summary = RunSummary {
        n_pairs: pairs.len(),
        n_records: all_records.len(),
        n_failures: data.values().map(|d| d.meta.failures.len()).sum(),
        top_quartile_rate: selections.iter().filter(|s| s.top_quartile).count() as f64 / n,
        mean_regret: selections.iter().map(|s| s.regret).sum::<f64>() / n,
        naive_mean_regret: selections.iter().map(|s| s.naive_regret).sum::<f64>() / n,
        mean_selector_adjusted_r2: selectors.iter().map(|s| s.adjusted_r2).sum::<f64>() / selectors.len() as f64,
        min_selector_adjusted_r2: selectors.iter().map(|s| s.adjusted_r2).fold(f64::INFINITY, f64::min),
        layer_spearman: report.spearman,
    };

    let mut stored_config = config.clone();
    stored_config.output_dir = PathBuf::from(".");
    stored_config.jobs = None;
    Ok(RunManifest {
        name: config.name.clone(),
        config: stored_config,
        domains: names.to_vec(),
        pairs: data.into_values().map(|d| d.meta).collect(),
        folds: folds.iter().map(|f| f.iter().map(PairKey::id).collect()).collect(),
        selectors,
        selections,
        analysis_files,
        summary,
    })
}
