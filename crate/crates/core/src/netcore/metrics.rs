use super::model::{Example, LayerStackModel};
use crate::error::{Error, Result};

/// `confusion[gold][pred]` counts.
pub fn confusion_matrix(predicted: &[usize], gold: &[usize], n_classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &g) in predicted.iter().zip(gold) {
        m[g][p] += 1;
    }
    m
}

/// Unweighted mean of per-class F1 over all `n_classes` classes. A class
/// whose F1 denominator is zero scores 0.
pub fn macro_f1(predicted: &[usize], gold: &[usize], n_classes: usize) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != gold.len() {
        return Err(Error::input(format!(
            "macro F1 needs equal nonempty inputs, got {} and {}",
            predicted.len(),
            gold.len()
        )));
    }
    if let Some(&c) = predicted.iter().chain(gold).find(|&&c| c >= n_classes) {
        return Err(Error::input(format!("class {c} outside {n_classes} classes")));
    }
    let m = confusion_matrix(predicted, gold, n_classes);
    let mut total = 0.0;
    for c in 0..n_classes {
        let tp = m[c][c] as f64;
        let gold_c: u64 = m[c].iter().sum();
        let pred_c: u64 = m.iter().map(|row| row[c]).sum();
        let denom = (gold_c + pred_c) as f64;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    Ok(total / n_classes as f64)
}

pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != gold.len() {
        return Err(Error::input("accuracy needs equal nonempty inputs"));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predicted.len() as f64)
}

fn predictions(model: &LayerStackModel, data: &[Example]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pred = Vec::with_capacity(data.len());
    let mut gold = Vec::with_capacity(data.len());
    for x in data {
        let label = x.label.ok_or_else(|| Error::input("evaluation example has no label"))?;
        pred.push(model.predict_label(x)?);
        gold.push(label);
    }
    Ok((pred, gold))
}

pub fn evaluate_macro_f1(model: &LayerStackModel, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("empty evaluation set"));
    }
    let (pred, gold) = predictions(model, data)?;
    macro_f1(&pred, &gold, model.dims().classes)
}

pub fn evaluate_accuracy(model: &LayerStackModel, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("empty evaluation set"));
    }
    let (pred, gold) = predictions(model, data)?;
    accuracy(&pred, &gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        assert_eq!(macro_f1(&y, &y, 3).unwrap(), 1.0);
    }

    #[test]
    fn constant_prediction_on_balanced_binary() {
        let pred = [0, 0, 0, 0];
        let gold = [0, 0, 1, 1];
        // F1(0) = 2/3, F1(1) = 0
        assert!((macro_f1(&pred, &gold, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let y = [0, 1, 0, 1];
        assert!((macro_f1(&y, &y, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    /// Per-class precision/recall computed by counting, independent of the
    /// confusion matrix path.
    fn oracle(pred: &[usize], gold: &[usize], k: usize) -> f64 {
        let mut sum = 0.0;
        for c in 0..k {
            let tp = pred.iter().zip(gold).filter(|(p, g)| **p == c && **g == c).count() as f64;
            let fp = pred.iter().zip(gold).filter(|(p, g)| **p == c && **g != c).count() as f64;
            let fneg = pred.iter().zip(gold).filter(|(p, g)| **p != c && **g == c).count() as f64;
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            if precision + recall > 0.0 {
                sum += 2.0 * precision * recall / (precision + recall);
            }
        }
        sum / k as f64
    }

    #[test]
    fn matches_precision_recall_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let k = rng.random_range(2..6);
            let n = rng.random_range(1..40);
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let got = macro_f1(&pred, &gold, k).unwrap();
            assert!((got - oracle(&pred, &gold, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        assert!(macro_f1(&[], &[], 2).is_err());
        assert!(macro_f1(&[2], &[0], 2).is_err());
    }
}
