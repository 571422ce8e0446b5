use serde::{Deserialize, Serialize};

use super::dist::two_sided_p_value;
use crate::error::{Error, Result};
use crate::features::CandidateRecord;

/// Columns relative to the largest column norm below which a pivot counts
/// as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Predictor columns plus response. The intercept is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub response: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, response: Vec<f64>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::input("one name per column required"));
        }
        let n = response.len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::input("columns and response differ in length"));
        }
        if columns.iter().flatten().chain(&response).any(|v| !v.is_finite()) {
            return Err(Error::input("design contains missing or non-finite values"));
        }
        Ok(Self {
            names,
            columns,
            response,
        })
    }

    /// Rows are records with a target F1; columns are `terms`.
    pub fn from_records(records: &[CandidateRecord], terms: &[String]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(records.len()); terms.len()];
        let mut response = Vec::with_capacity(records.len());
        for r in records {
            response.push(
                r.target_f1
                    .ok_or_else(|| Error::input(format!("record {} {} has no target F1", r.pair_id, r.spec)))?,
            );
            for (col, term) in columns.iter_mut().zip(terms) {
                col.push(r.feature(term).ok_or_else(|| Error::MissingTerm(term.clone()))?);
            }
        }
        Self::new(terms.to_vec(), columns, response)
    }

    pub fn rows(&self) -> usize {
        self.response.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Copy with rows reordered by `perm`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| perm.iter().map(|&i| c[i]).collect())
                .collect(),
            response: perm.iter().map(|&i| self.response[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// Predictor names, without the intercept.
    pub terms: Vec<String>,
    /// Intercept first, then one per term.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub n: usize,
    pub dof: usize,
}

/// `1 - (1 - r2)(n - 1)/(n - k - 1)` for `k` predictors.
pub fn adjusted_r2(r2: f64, n: usize, k: usize) -> f64 {
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - k as f64 - 1.0)
}

/// Least squares of the response on an intercept plus `terms` (column
/// indices) via Householder QR, with classical t-test inference.
pub fn ols_fit(design: &DesignMatrix, terms: &[usize]) -> Result<OlsFit> {
    let n = design.rows();
    let k = terms.len();
    let p = k + 1;
    if n <= p {
        return Err(Error::InsufficientData { rows: n, params: p });
    }
    if let Some(&bad) = terms.iter().find(|&&t| t >= design.columns.len()) {
        return Err(Error::input(format!("column index {bad} out of range")));
    }
    let names: Vec<String> = std::iter::once("(intercept)".to_string())
        .chain(terms.iter().map(|&t| design.names[t].clone()))
        .collect();

    // Column-major working copy of [1 | X_terms].
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(p);
    a.push(vec![1.0; n]);
    for &t in terms {
        a.push(design.columns[t].clone());
    }
    let max_norm = a
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let tol = RANK_TOLERANCE * max_norm.max(f64::MIN_POSITIVE);

    let mut qty = design.response.clone();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= tol {
            return Err(Error::Singular {
                column: names[j].clone(),
            });
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= f * vi;
            }
        };
        for col in a.iter_mut().skip(j) {
            reflect(&mut col[j..]);
        }
        reflect(&mut qty[j..]);
        for (i, col) in a.iter().enumerate().skip(j) {
            r[j][i] = col[j];
        }
    }

    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| r[i][j] * beta[j]).sum();
        beta[i] = (qty[i] - s) / r[i][i];
    }

    // R^{-1}, upper triangular, for the coefficient covariance.
    let mut rinv = vec![vec![0.0; p]; p];
    for col in 0..p {
        for i in (0..=col).rev() {
            let rhs = if i == col { 1.0 } else { 0.0 };
            let s: f64 = (i + 1..=col).map(|j| r[i][j] * rinv[j][col]).sum();
            rinv[i][col] = (rhs - s) / r[i][i];
        }
    }

    let fitted: Vec<f64> = (0..n)
        .map(|row| {
            beta[0]
                + terms
                    .iter()
                    .zip(&beta[1..])
                    .map(|(&t, b)| design.columns[t][row] * b)
                    .sum::<f64>()
        })
        .collect();
    let residuals: Vec<f64> = design.response.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let mean = design.response.iter().sum::<f64>() / n as f64;
    let tss: f64 = design.response.iter().map(|y| (y - mean).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
    let dof = n - p;
    let sigma2 = rss / dof as f64;

    let mut std_errors = Vec::with_capacity(p);
    let mut t_values = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for i in 0..p {
        let var: f64 = rinv[i][i..].iter().map(|v| v * v).sum::<f64>() * sigma2;
        let se = var.sqrt();
        let t = if se > 0.0 {
            beta[i] / se
        } else if beta[i] == 0.0 {
            0.0
        } else {
            beta[i].signum() * f64::INFINITY
        };
        std_errors.push(se);
        t_values.push(t);
        p_values.push(two_sided_p_value(t, dof as f64));
    }

    Ok(OlsFit {
        terms: names[1..].to_vec(),
        coefficients: beta,
        std_errors,
        t_values,
        p_values,
        residuals,
        fitted,
        r2,
        adjusted_r2: adjusted_r2(r2, n, k),
        n,
        dof,
    })
}
