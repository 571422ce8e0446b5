//! Average treatment effect of a layer removal on model predictions: the
//! mean distance between base and candidate output distributions over an
//! unlabeled corpus.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{Example, LayerStackModel, ProbDist};

/// Additive smoothing applied to both distributions before KL.
pub const KL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AteMetric {
    #[default]
    TotalVariation,
    Kl,
}

impl fmt::Display for AteMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AteMetric::TotalVariation => "total_variation",
            AteMetric::Kl => "kl",
        })
    }
}

impl FromStr for AteMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total_variation" | "tv" => Ok(AteMetric::TotalVariation),
            "kl" => Ok(AteMetric::Kl),
            other => Err(Error::input(format!("unknown ATE metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub value: f64,
    pub metric: AteMetric,
    pub n_examples: usize,
    pub domain_name: String,
}

/// Sum of absolute coordinate differences, in `[0, 2]` for distributions.
pub fn tv_distance_slices(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

pub fn tv_distance(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    check_dims(p, q)?;
    Ok(tv_distance_slices(p.as_slice(), q.as_slice()))
}

/// `sum_i p_i ln(p_i / q_i)` after adding [`KL_EPSILON`] to every component
/// of both vectors and renormalising.
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    check_dims(p, q)?;
    let smooth = |v: &[f64]| -> Vec<f64> {
        let total: f64 = v.iter().map(|x| x + KL_EPSILON).sum();
        v.iter().map(|x| (x + KL_EPSILON) / total).collect()
    };
    let ps = smooth(p.as_slice());
    let qs = smooth(q.as_slice());
    let kl: f64 = ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

fn check_dims(p: &ProbDist, q: &ProbDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::input(format!(
            "distribution dimensions differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

pub fn distance(metric: AteMetric, p: &ProbDist, q: &ProbDist) -> Result<f64> {
    match metric {
        AteMetric::TotalVariation => tv_distance(p, q),
        AteMetric::Kl => kl_divergence(p, q),
    }
}

/// Effect on a single example: positionwise distances averaged within the
/// example.
pub fn example_effect(
    base: &LayerStackModel,
    candidate: &LayerStackModel,
    x: &Example,
    metric: AteMetric,
) -> Result<f64> {
    let a = base.forward(x)?;
    let b = candidate.forward(x)?;
    let mut total = 0.0;
    for (p, q) in a.iter().zip(&b) {
        total += distance(metric, p, q)?;
    }
    Ok(total / a.len() as f64)
}

pub fn estimate_ate(
    base: &LayerStackModel,
    candidate: &LayerStackModel,
    corpus: &[Example],
    metric: AteMetric,
    domain_name: &str,
) -> Result<AteEstimate> {
    if corpus.is_empty() {
        return Err(Error::input("cannot estimate an effect on an empty corpus"));
    }
    if base.dims().classes != candidate.dims().classes {
        return Err(Error::input("base and candidate have different label spaces"));
    }
    let effects = corpus
        .par_iter()
        .map(|x| example_effect(base, candidate, x, metric))
        .collect::<Result<Vec<f64>>>()?;
    let value = effects.iter().sum::<f64>() / corpus.len() as f64;
    Ok(AteEstimate {
        value,
        metric,
        n_examples: corpus.len(),
        domain_name: domain_name.to_string(),
    })
}
