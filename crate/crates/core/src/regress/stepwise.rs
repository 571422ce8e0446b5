use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ols::{ols_fit, DesignMatrix, OlsFit};
use crate::error::{Error, Result};
use crate::features::CandidateRecord;

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    pub name: String,
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    /// p-value of this term when it entered the model.
    pub entry_p: f64,
    /// Adjusted-R² gain in the round the term entered.
    pub delta_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterceptStats {
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

/// Forward-stepwise linear model; `terms` are in entry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub intercept: InterceptStats,
    pub terms: Vec<TermStats>,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub n: usize,
    pub alpha: f64,
    /// Adjusted R² after each round, starting with the intercept-only fit.
    pub adjusted_r2_path: Vec<f64>,
}

impl RegressionModel {
    pub fn selected_terms(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name.as_str()).collect()
    }

    /// Linear prediction from named feature values. No clipping.
    pub fn predict_with(&self, mut feature: impl FnMut(&str) -> Option<f64>) -> Result<f64> {
        let mut y = self.intercept.beta;
        for t in &self.terms {
            let x = feature(&t.name).ok_or_else(|| Error::MissingTerm(t.name.clone()))?;
            y += t.beta * x;
        }
        Ok(y)
    }

    pub fn predict(&self, record: &CandidateRecord) -> Result<f64> {
        self.predict_with(|name| record.feature(name))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("regression model JSON: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn from_fit(fit: &OlsFit, entry: &[(f64, f64)], path: Vec<f64>, alpha: f64) -> Self {
        Self {
            intercept: InterceptStats {
                beta: fit.coefficients[0],
                se: fit.std_errors[0],
                t: fit.t_values[0],
                p: fit.p_values[0],
            },
            terms: fit
                .terms
                .iter()
                .enumerate()
                .map(|(i, name)| TermStats {
                    name: name.clone(),
                    beta: fit.coefficients[i + 1],
                    se: fit.std_errors[i + 1],
                    t: fit.t_values[i + 1],
                    p: fit.p_values[i + 1],
                    entry_p: entry[i].0,
                    delta_r2: entry[i].1,
                })
                .collect(),
            r2: fit.r2,
            adjusted_r2: fit.adjusted_r2,
            n: fit.n,
            alpha,
            adjusted_r2_path: path,
        }
    }
}

/// Forward selection over `candidates` (column indices). Each round fits
/// every remaining term alongside the selected ones and admits the one with
/// the smallest p-value if it is below `alpha`; ties go to the larger |t|,
/// then the lower column index. Terms whose addition makes the design
/// singular are skipped for that round.
pub fn stepwise_fit(design: &DesignMatrix, candidates: &[usize], alpha: f64) -> Result<RegressionModel> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::input(format!("alpha {alpha} outside (0, 1]")));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut entry: Vec<(f64, f64)> = Vec::new();
    let mut current = ols_fit(design, &selected)?;
    let mut path = vec![current.adjusted_r2];
    let mut remaining: Vec<usize> = candidates.to_vec();
    remaining.sort_unstable();
    remaining.dedup();

    loop {
        let mut best: Option<(usize, f64, f64, OlsFit)> = None;
        for &c in &remaining {
            let mut trial = selected.clone();
            trial.push(c);
            let fit = match ols_fit(design, &trial) {
                Ok(f) => f,
                Err(Error::Singular { .. }) | Err(Error::InsufficientData { .. }) => continue,
                Err(e) => return Err(e),
            };
            let p = fit.p_values[trial.len()];
            let t = fit.t_values[trial.len()].abs();
            let better = match &best {
                None => true,
                Some((bc, bp, bt, _)) => p < *bp || (p == *bp && (t > *bt || (t == *bt && c < *bc))),
            };
            if better {
                best = Some((c, p, t, fit));
            }
        }
        match best {
            Some((c, p, _, fit)) if p < alpha => {
                entry.push((p, fit.adjusted_r2 - current.adjusted_r2));
                path.push(fit.adjusted_r2);
                selected.push(c);
                remaining.retain(|&r| r != c);
                current = fit;
            }
            _ => break,
        }
    }
    Ok(RegressionModel::from_fit(&current, &entry, path, alpha))
}

/// Stepwise fit over named terms of a record set.
pub fn stepwise_from_records(records: &[CandidateRecord], terms: &[String], alpha: f64) -> Result<RegressionModel> {
    let design = DesignMatrix::from_records(records, terms)?;
    let all: Vec<usize> = (0..terms.len()).collect();
    stepwise_fit(&design, &all, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noise(n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn picks_the_real_signal() {
        let n = 200;
        let x1 = noise(n, 1.0, 1);
        let x2 = noise(n, 1.0, 2);
        let eps = noise(n, 0.01, 3);
        let y: Vec<f64> = x1.iter().zip(&eps).map(|(a, e)| 3.0 * a + e).collect();
        let d = DesignMatrix::new(vec!["x1".into(), "x2".into()], vec![x1, x2], y).unwrap();
        let m = stepwise_fit(&d, &[0, 1], DEFAULT_ALPHA).unwrap();
        assert_eq!(m.selected_terms(), vec!["x1"]);
        assert!((m.terms[0].beta - 3.0).abs() < 1e-2);
        assert!(m.terms[0].entry_p < DEFAULT_ALPHA);
    }

    #[test]
    fn pure_noise_gives_intercept_only() {
        let n = 60;
        let cols = vec![noise(n, 1.0, 10), noise(n, 1.0, 11)];
        let y = noise(n, 1.0, 12);
        let d = DesignMatrix::new(vec!["a".into(), "b".into()], cols, y).unwrap();
        let m = stepwise_fit(&d, &[0, 1], 1e-6).unwrap();
        assert!(m.terms.is_empty());
        let c = m.predict_with(|_| None).unwrap();
        assert_eq!(c, m.intercept.beta);
    }

    #[test]
    fn hand_built_prediction() {
        let m = RegressionModel {
            intercept: InterceptStats {
                beta: 0.1,
                se: 0.0,
                t: 0.0,
                p: 1.0,
            },
            terms: vec![TermStats {
                name: "f1_s".into(),
                beta: 0.5,
                se: 0.0,
                t: 0.0,
                p: 0.0,
                entry_p: 0.0,
                delta_r2: 0.0,
            }],
            r2: 0.0,
            adjusted_r2: 0.0,
            n: 0,
            alpha: 0.01,
            adjusted_r2_path: vec![],
        };
        let y = m.predict_with(|n| (n == "f1_s").then_some(0.8)).unwrap();
        assert!((y - 0.5).abs() < 1e-15);
        assert!(matches!(m.predict_with(|_| None), Err(Error::MissingTerm(_))));
        let back = RegressionModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn duplicate_column_is_skipped_not_fatal() {
        let n = 80;
        let x = noise(n, 1.0, 4);
        let y: Vec<f64> = x.iter().zip(noise(n, 0.1, 5)).map(|(a, e)| a + e).collect();
        let d = DesignMatrix::new(vec!["x".into(), "x_copy".into()], vec![x.clone(), x], y).unwrap();
        let m = stepwise_fit(&d, &[0, 1], 0.01).unwrap();
        assert_eq!(m.selected_terms(), vec!["x"]);
    }
}
