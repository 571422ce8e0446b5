use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::audit::AuditedDomain;
use super::config::ExperimentConfig;
use super::steps::{pair_features, SourceArtifacts};
use crate::compress::CandidateSpec;
use crate::error::{Error, Result};
use crate::features::{
    size_term, CandidateRecord, TERM_ATE_S, TERM_ATE_T, TERM_ATE_T_X_P, TERM_F1_S, TERM_F1_S_X_P, TERM_P_S_T,
};
use crate::regress::{stepwise_from_records, RegressionModel};

/// Candidate terms for the selector: the four base covariates, their two
/// interactions with P(S|T), and one indicator per non-baseline size.
pub fn selector_terms(sizes: &[usize]) -> Vec<String> {
    let mut terms: Vec<String> = [
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
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    terms.extend(sizes.iter().skip(1).map(|&s| size_term(s)));
    terms
}

/// Stepwise regression of target F1 on [`selector_terms`]. The sizes are
/// read from the records' indicator sets.
pub fn fit_selector(records: &[CandidateRecord], alpha: f64) -> Result<RegressionModel> {
    let first = records
        .first()
        .ok_or_else(|| Error::input("no records to fit a selector on"))?;
    let terms = first.term_names();
    if let Some(r) = records.iter().find(|r| r.term_names() != terms) {
        return Err(Error::input(format!(
            "record {} {} has a different size-indicator set",
            r.pair_id, r.spec
        )));
    }
    stepwise_from_records(records, &terms, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub spec: CandidateSpec,
    pub predicted: f64,
    pub f1_source: f64,
}

fn order(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    b.predicted
        .total_cmp(&a.predicted)
        .then(b.f1_source.total_cmp(&a.f1_source))
        .then(a.spec.size().cmp(&b.spec.size()))
        .then(a.spec.cmp(&b.spec))
}

/// Candidates by predicted target F1, best first. Ties go to the higher
/// source F1, then the smaller removal set.
pub fn rank_candidates(selector: &RegressionModel, records: &[CandidateRecord]) -> Result<Vec<RankedCandidate>> {
    if records.is_empty() {
        return Err(Error::input("no candidates to rank"));
    }
    let mut ranked = records
        .iter()
        .map(|r| {
            let predicted = selector.predict(r).map_err(|e| match e {
                Error::MissingTerm(t) => Error::input(format!("selector term `{t}` missing from record {}", r.spec)),
                other => other,
            })?;
            Ok(RankedCandidate {
                spec: r.spec.clone(),
                predicted,
                f1_source: r.f1_source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(order);
    Ok(ranked)
}

/// The naive rule: the candidate with the best source held-out F1.
pub fn naive_ranking(records: &[CandidateRecord]) -> Vec<RankedCandidate> {
    let mut ranked: Vec<RankedCandidate> = records
        .iter()
        .map(|r| RankedCandidate {
            spec: r.spec.clone(),
            predicted: r.f1_source,
            f1_source: r.f1_source,
        })
        .collect();
    ranked.sort_by(order);
    ranked
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub chosen: CandidateSpec,
    pub ranked: Vec<RankedCandidate>,
    /// Label-free records the ranking was computed from.
    pub records: Vec<CandidateRecord>,
    pub p_s_given_t: f64,
}

/// Scores the source's candidates on an unseen target and picks the one
/// with the highest predicted F1. Reads only source data and target text.
pub fn select_for_unseen_pair(
    config: &ExperimentConfig,
    artifacts: &SourceArtifacts,
    source: &AuditedDomain,
    target: &AuditedDomain,
    selector: &RegressionModel,
) -> Result<Selection> {
    let features = pair_features(config, artifacts, source, target)?;
    let ranked = rank_candidates(selector, &features.records)?;
    Ok(Selection {
        chosen: ranked[0].spec.clone(),
        ranked,
        records: features.records,
        p_s_given_t: features.p_s_given_t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub chosen: CandidateSpec,
    pub chosen_f1: f64,
    pub best: CandidateSpec,
    pub best_f1: f64,
    /// Best F1 minus the chosen candidate's F1.
    pub regret: f64,
    /// 1 + number of candidates with strictly higher F1.
    pub rank: usize,
    pub n_candidates: usize,
}

/// Regret and rank of `chosen` among `oracle` (spec, true target F1)
/// pairs. The best candidate is the first one with the maximum F1.
pub fn evaluate_selection(chosen: &CandidateSpec, oracle: &[(CandidateSpec, f64)]) -> Result<SelectionReport> {
    let chosen_f1 = oracle
        .iter()
        .find(|(s, _)| s == chosen)
        .map(|&(_, f)| f)
        .ok_or_else(|| Error::input(format!("chosen candidate {chosen} has no oracle score")))?;
    let (best, best_f1) = oracle
        .iter()
        .fold(None::<&(CandidateSpec, f64)>, |acc, c| match acc {
            Some(b) if b.1 >= c.1 => Some(b),
            _ => Some(c),
        })
        .cloned()
        .expect("oracle is nonempty");
    let rank = 1 + oracle.iter().filter(|(_, f)| *f > chosen_f1).count();
    Ok(SelectionReport {
        chosen: chosen.clone(),
        chosen_f1,
        best,
        best_f1,
        regret: best_f1 - chosen_f1,
        rank,
        n_candidates: oracle.len(),
    })
}

pub fn write_oracle(path: &Path, pair_id: &str, scores: &[(CandidateSpec, f64)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["pair_id", "spec", "target_test_f1"])
        .map_err(|e| csv_err(path, e))?;
    for (s, f) in scores {
        w.write_record([pair_id.to_string(), s.to_string(), format!("{f:?}")])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `(pair_id, spec, target_test_f1)` rows.
pub fn read_oracle(path: &Path) -> Result<Vec<(String, CandidateSpec, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let bad = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: m,
        };
        if row.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", row.len())));
        }
        let spec = CandidateSpec::parse(&row[1]).map_err(|e| bad(e.to_string()))?;
        let f1: f64 = row[2].parse().map_err(|e| bad(format!("target_test_f1: {e}")))?;
        out.push((row[0].to_string(), spec, f1));
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: e.to_string(),
    }
}
