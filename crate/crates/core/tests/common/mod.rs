#![allow(dead_code)]

use amoc_core::netcore::{Dims, Example, LayerStackModel, ParamId};
use amoc_core::regress::DesignMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn model(vocab: usize, hidden: usize, classes: usize, depth: usize, seed: u64) -> LayerStackModel {
    LayerStackModel::new(
        Dims {
            vocab,
            hidden,
            classes,
            depth,
        },
        seed,
    )
    .unwrap()
}

/// Same model with every tensor jittered, so attention and head are not at
/// their special initial values.
pub fn jittered(mut m: LayerStackModel, seed: u64, scale: f64) -> LayerStackModel {
    let mut r = rng(seed);
    for id in m.param_ids() {
        for v in m.tensor_mut(id) {
            *v += scale * (r.random::<f64>() - 0.5);
        }
    }
    m
}

pub fn random_tokens(r: &mut impl Rng, vocab: usize, max_len: usize) -> Vec<u32> {
    let len = r.random_range(1..=max_len);
    (0..len).map(|_| r.random_range(0..vocab as u32)).collect()
}

pub fn random_examples(seed: u64, n: usize, vocab: usize, classes: usize) -> Vec<Example> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| Example::labeled(random_tokens(&mut r, vocab, 12), r.random_range(0..classes)))
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Plain-loop forward pass written against the public tensor accessors only.
pub fn scalar_forward(m: &LayerStackModel, tokens: &[u32]) -> Vec<f64> {
    let dims = m.dims();
    let d = dims.hidden;
    let emb = m.tensor(ParamId::Embedding);
    let mut h = vec![0.0; d];
    for &t in tokens {
        for k in 0..d {
            h[k] += emb[t as usize * d + k];
        }
    }
    for v in h.iter_mut() {
        *v /= tokens.len() as f64;
    }
    let n_layers = m.layers().len();
    let mut outputs = Vec::new();
    for j in 0..n_layers {
        let w = m.tensor(ParamId::LayerWeight(j));
        let b = m.tensor(ParamId::LayerBias(j));
        let mut next = h.clone();
        for r in 0..d {
            let mut pre = b[r];
            for c in 0..d {
                pre += w[r * d + c] * h[c];
            }
            next[r] += pre.tanh();
        }
        h = next;
        outputs.push(h.clone());
    }
    let alpha = softmax(m.tensor(ParamId::Attention));
    let mut mix = vec![0.0; d];
    for (a, o) in alpha.iter().zip(&outputs) {
        for k in 0..d {
            mix[k] += a * o[k];
        }
    }
    let hw = m.tensor(ParamId::HeadWeight);
    let hb = m.tensor(ParamId::HeadBias);
    let logits: Vec<f64> = (0..dims.classes)
        .map(|c| hb[c] + (0..d).map(|k| hw[c * d + k] * mix[k]).sum::<f64>())
        .collect();
    softmax(&logits)
}

/// Maximal runs of consecutive kept layers, by scanning every layer.
pub fn brute_runs(removed: &[usize], depth: usize) -> Vec<Vec<usize>> {
    let kept: Vec<usize> = (1..=depth).filter(|l| !removed.contains(l)).collect();
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for l in kept {
        match runs.last_mut() {
            Some(run) if *run.last().unwrap() + 1 == l => run.push(l),
            _ => runs.push(vec![l]),
        }
    }
    runs
}

/// Average ranks by counting smaller and equal values.
pub fn counted_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    pearson(&counted_ranks(a), &counted_ranks(b))
}

/// 50 random permutations of a sequence with repeated values, against a
/// second tied sequence.
pub fn tied_permutation_cases(seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut r = rng(seed);
    (0..50)
        .map(|_| {
            let n = r.random_range(5..30);
            let mut a: Vec<f64> = (0..n).map(|i| (i / 2) as f64).collect();
            a.shuffle(&mut r);
            let b: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64).collect();
            (a, b)
        })
        .collect()
}

pub fn gaussian(r: &mut impl Rng, n: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(r)).collect()
}

pub fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("x{i}")).collect()
}

pub fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// Solves the normal equations of `[1 | X]` in exact rational arithmetic.
pub fn rational_oracle(d: &DesignMatrix, terms: &[usize]) -> Vec<f64> {
    let n = d.rows();
    let cols: Vec<Vec<BigRational>> = std::iter::once(vec![BigRational::from_integer(BigInt::from(1)); n])
        .chain(terms.iter().map(|&t| d.columns[t].iter().map(|&v| exact(v)).collect()))
        .collect();
    let y: Vec<BigRational> = d.response.iter().map(|&v| exact(v)).collect();
    let p = cols.len();
    let dot =
        |a: &[BigRational], b: &[BigRational]| a.iter().zip(b).fold(BigRational::zero(), |acc, (u, v)| acc + u * v);
    let mut m: Vec<Vec<BigRational>> = (0..p)
        .map(|i| {
            let mut row: Vec<BigRational> = (0..p).map(|j| dot(&cols[i], &cols[j])).collect();
            row.push(dot(&cols[i], &y));
            row
        })
        .collect();
    for c in 0..p {
        let pivot = (c..p).find(|&r| !m[r][c].is_zero()).expect("nonsingular");
        m.swap(c, pivot);
        for r in 0..p {
            if r != c && !m[r][c].is_zero() {
                let f = &m[r][c] / &m[c][c];
                for k in c..=p {
                    let v = &f * &m[c][k];
                    m[r][k] -= v;
                }
            }
        }
    }
    (0..p).map(|i| (&m[i][p] / &m[i][i]).to_f64().unwrap()).collect()
}

/// Plain normal-equation solve with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let p = b.len();
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..p {
            let f = a[r][c] / a[c][c];
            for k in c..p {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// |t| of the last term in an intercept + `terms` fit, or None if singular.
pub fn last_t(d: &DesignMatrix, terms: &[usize]) -> Option<(f64, usize)> {
    let n = d.rows();
    let cols: Vec<Vec<f64>> = std::iter::once(vec![1.0; n])
        .chain(terms.iter().map(|&t| d.columns[t].clone()))
        .collect();
    let p = cols.len();
    let xtx: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let xty: Vec<f64> = (0..p)
        .map(|i| cols[i].iter().zip(&d.response).map(|(a, b)| a * b).sum())
        .collect();
    let beta = solve(xtx.clone(), xty)?;
    let rss: f64 = (0..n)
        .map(|r| d.response[r] - (0..p).map(|j| beta[j] * cols[j][r]).sum::<f64>())
        .map(|e| e * e)
        .sum();
    let dof = n - p;
    let mut unit = vec![0.0; p];
    unit[p - 1] = 1.0;
    let inv_col = solve(xtx, unit)?;
    let se = (rss / dof as f64 * inv_col[p - 1]).sqrt();
    Some(((beta[p - 1] / se).abs(), dof))
}

/// Forward selection refitting every (round, candidate) pair from scratch.
pub fn brute_stepwise(d: &DesignMatrix, alpha: f64) -> Vec<usize> {
    let mut selected = Vec::new();
    loop {
        let mut best: Option<(usize, f64, usize)> = None;
        for c in 0..d.columns.len() {
            if selected.contains(&c) {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(c);
            if let Some((t, dof)) = last_t(d, &trial) {
                if best.is_none_or(|(_, bt, _)| t > bt) {
                    best = Some((c, t, dof));
                }
            }
        }
        match best {
            Some((c, t, dof)) if 2.0 * StudentsT::new(0.0, 1.0, dof as f64).unwrap().cdf(-t) < alpha => {
                selected.push(c)
            }
            _ => return selected,
        }
    }
}

pub fn random_design(seed: u64, n: usize, k: usize) -> DesignMatrix {
    let mut r = rng(seed);
    let cols: Vec<Vec<f64>> = (0..k).map(|_| gaussian(&mut r, n, 1.0)).collect();
    let betas: Vec<f64> = (0..k)
        .map(|_| {
            if r.random_bool(0.5) {
                r.random_range(-0.6..0.6)
            } else {
                0.0
            }
        })
        .collect();
    let noise = gaussian(&mut r, n, 1.0);
    let y = (0..n)
        .map(|i| 0.3 + noise[i] + (0..k).map(|j| betas[j] * cols[j][i]).sum::<f64>())
        .collect();
    DesignMatrix::new(names(k), cols, y).unwrap()
}

pub fn loss_of(m: &LayerStackModel, batch: &[Example]) -> f64 {
    m.loss_and_grads(batch).unwrap().0
}

/// Largest entrywise relative error between analytic and central-difference
/// gradients, over every tensor.
pub fn gradient_error(m: &LayerStackModel, batch: &[Example]) -> f64 {
    const H: f64 = 1e-4;
    let (_, grads) = m.loss_and_grads(batch).unwrap();
    let mut worst: f64 = 0.0;
    for id in m.param_ids() {
        let analytic = grads.get(id).expect("all tensors trainable").to_vec();
        for i in 0..analytic.len() {
            let mut plus = m.clone();
            plus.tensor_mut(id)[i] += H;
            let mut minus = m.clone();
            minus.tensor_mut(id)[i] -= H;
            let numeric = (loss_of(&plus, batch) - loss_of(&minus, batch)) / (2.0 * H);
            let scale = analytic[i].abs().max(numeric.abs()).max(1e-4);
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    worst
}
