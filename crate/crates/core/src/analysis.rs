//! Post-hoc views over finished runs: how often each layer survives in the
//! oracle-best candidates, per-layer removal effects from an indicator
//! regression, and rank agreement between the two.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::CandidateSpec;
use crate::error::{Error, Result};
use crate::features::CandidateRecord;
use crate::regress::{ols_fit, DesignMatrix};

/// Fraction of `best_specs` that keep each layer; index 0 is layer 1.
pub fn layer_frequency(best_specs: &[CandidateSpec], depth: usize) -> Result<Vec<f64>> {
    if best_specs.is_empty() {
        return Err(Error::input("no specs to count"));
    }
    let mut kept = vec![0usize; depth];
    for spec in best_specs {
        spec.validate(depth)?;
        for (l, k) in kept.iter_mut().enumerate() {
            if !spec.contains(l + 1) {
                *k += 1;
            }
        }
    }
    let n = best_specs.len() as f64;
    Ok(kept.into_iter().map(|k| k as f64 / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub layer: usize,
    /// Removal size the frequency is conditioned on; `None` pools all sizes.
    pub size: Option<usize>,
    pub frequency: f64,
    pub n_specs: usize,
}

/// Long-format frequency table: one block per removal size present in
/// `best_specs`, followed by the pooled block.
pub fn frequency_table(best_specs: &[CandidateSpec], depth: usize) -> Result<Vec<FrequencyRow>> {
    let mut by_size: BTreeMap<usize, Vec<CandidateSpec>> = BTreeMap::new();
    for s in best_specs {
        by_size.entry(s.size()).or_default().push(s.clone());
    }
    let mut rows = Vec::new();
    let groups = by_size
        .iter()
        .map(|(&size, specs)| (Some(size), specs.as_slice()))
        .chain(std::iter::once((None, best_specs)));
    for (size, specs) in groups {
        for (l, f) in layer_frequency(specs, depth)?.into_iter().enumerate() {
            rows.push(FrequencyRow {
                layer: l + 1,
                size,
                frequency: f,
                n_specs: specs.len(),
            });
        }
    }
    Ok(rows)
}

pub fn write_frequency_csv(path: &Path, rows: &[FrequencyRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["layer", "size", "frequency", "n_specs"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        let size = r.size.map(|s| s.to_string()).unwrap_or_else(|| "all".into());
        w.write_record([
            r.layer.to_string(),
            size,
            format!("{:?}", r.frequency),
            r.n_specs.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-layer removal coefficients averaged over domain pairs. Indicators
/// are coded 1 = removed, so a negative coefficient means removing the
/// layer tends to hurt target F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerImportance {
    /// Mean coefficient per layer (index 0 is layer 1); `None` when the
    /// layer could not be estimated for any pair.
    pub coefficients: Vec<Option<f64>>,
    /// Number of pairs contributing to each mean.
    pub pair_counts: Vec<usize>,
    /// `(pair_id, layer)` indicators left out of a pair's design.
    pub dropped: Vec<(String, usize)>,
}

/// For each pair, regresses target F1 on the `depth` layer-exclusion
/// indicators plus an intercept, then averages each layer's coefficient
/// across pairs. Indicators that are constant within a pair, or that make
/// the design singular, are dropped with a warning.
pub fn layer_importance_regression(records: &[CandidateRecord], depth: usize) -> Result<LayerImportance> {
    let mut by_pair: BTreeMap<&str, Vec<&CandidateRecord>> = BTreeMap::new();
    for r in records {
        by_pair.entry(r.pair_id.as_str()).or_default().push(r);
    }
    if by_pair.is_empty() {
        return Err(Error::input("no records for the importance regression"));
    }
    let mut sums = vec![0.0; depth];
    let mut counts = vec![0usize; depth];
    let mut dropped = Vec::new();
    for (pair, rows) in by_pair {
        let response = rows
            .iter()
            .map(|r| {
                r.target_f1
                    .ok_or_else(|| Error::input(format!("record {pair} {} has no target F1", r.spec)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut layers: Vec<usize> = Vec::new();
        for l in 1..=depth {
            let removed = rows.iter().filter(|r| r.spec.contains(l)).count();
            if removed == 0 || removed == rows.len() {
                log::warn!("{pair}: layer {l} is removed in every or no candidate; dropping its indicator");
                dropped.push((pair.to_string(), l));
            } else {
                layers.push(l);
            }
        }
        let fit = loop {
            let names = layers.iter().map(|l| format!("removed_{l}")).collect();
            let columns = layers
                .iter()
                .map(|&l| {
                    rows.iter()
                        .map(|r| if r.spec.contains(l) { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            let design = DesignMatrix::new(names, columns, response.clone())?;
            let all: Vec<usize> = (0..layers.len()).collect();
            match ols_fit(&design, &all) {
                Ok(fit) => break Some(fit),
                Err(Error::Singular { column }) => {
                    let Some(pos) = design.column_index(&column) else {
                        return Err(Error::Internal(format!("singular column {column} not in design")));
                    };
                    log::warn!("{pair}: indicator {column} is collinear with earlier columns; dropping it");
                    dropped.push((pair.to_string(), layers[pos]));
                    layers.remove(pos);
                }
                Err(Error::InsufficientData { rows, params }) => {
                    log::warn!("{pair}: {rows} records cannot support {params} coefficients; skipping pair");
                    break None;
                }
                Err(e) => return Err(e),
            }
        };
        if let Some(fit) = fit {
            for (i, &l) in layers.iter().enumerate() {
                sums[l - 1] += fit.coefficients[i + 1];
                counts[l - 1] += 1;
            }
        }
    }
    Ok(LayerImportance {
        coefficients: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
        pair_counts: counts,
        dropped,
    })
}

/// Ranks starting at 1, tied values sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::input("need at least two observations"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::input("NaN in ranking input"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::input("a ranking is constant; correlation undefined"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub depth: usize,
    pub frequency: Vec<f64>,
    pub importance: LayerImportance,
    /// Correlation between how often a layer is removed in the best models
    /// and its mean removal coefficient, over layers with a coefficient.
    pub spearman: Option<f64>,
}

/// Frequency profile, importance regression and their rank agreement.
pub fn layer_report(best_specs: &[CandidateSpec], records: &[CandidateRecord], depth: usize) -> Result<LayerReport> {
    let frequency = layer_frequency(best_specs, depth)?;
    let importance = layer_importance_regression(records, depth)?;
    let (removal_rate, beta): (Vec<f64>, Vec<f64>) = frequency
        .iter()
        .zip(&importance.coefficients)
        .filter_map(|(f, b)| b.map(|b| (1.0 - f, b)))
        .unzip();
    let rho = match spearman(&removal_rate, &beta) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("rank correlation unavailable: {e}");
            None
        }
    };
    Ok(LayerReport {
        depth,
        frequency,
        importance,
        spearman: rho,
    })
}

pub fn write_importance_csv(path: &Path, importance: &LayerImportance) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["layer", "coefficient", "n_pairs"])
        .map_err(|e| csv_err(path, e))?;
    for (l, (b, n)) in importance.coefficients.iter().zip(&importance.pair_counts).enumerate() {
        let b = b.map(|v| format!("{v:?}")).unwrap_or_default();
        w.write_record([(l + 1).to_string(), b, n.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: e.to_string(),
    }
}
