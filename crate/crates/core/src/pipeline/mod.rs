//! The full selection loop: base models per source, compressed candidates,
//! features per domain pair, fold-wise selector fits, and scoring of the
//! selected candidate on held-out pairs.

mod audit;
mod config;
mod folds;
mod run;
mod selection;
mod steps;

pub use audit::{Access, AuditedDomain, Split};
pub use config::{check_domain_name, DataSource, ExperimentConfig, FoldConfig, ModelShape};
pub use folds::{ordered_pairs, pair_folds, training_pairs, PairKey};
pub use run::{
    pair_file, run_all, PairMeta, PairSeeds, PairSelection, RunManifest, RunOutcome, RunSummary, SelectorEntry, Timings,
};
pub use selection::{
    evaluate_selection, fit_selector, naive_ranking, rank_candidates, read_oracle, select_for_unseen_pair,
    selector_terms, write_oracle, RankedCandidate, Selection, SelectionReport,
};
pub use steps::{
    attach_target_f1, base_model_path, candidate_specs, load_or_train_base, oracle_test_f1, pair_features,
    prepare_source, train_base, CandidateFailure, CandidateModel, PairFeatures, SourceArtifacts,
};
