mod common;

use amoc_core::compress::{compress, CandidateSpec};
use amoc_core::effects::{estimate_ate, example_effect, kl_divergence, tv_distance, AteMetric};
use amoc_core::netcore::{Example, ProbDist};
use common::{jittered, model};
use rand::seq::SliceRandom;

fn corpus(seed: u64, n: usize) -> Vec<Example> {
    let mut r = common::rng(seed);
    (0..n)
        .map(|i| {
            let mut x = Example::unlabeled(common::random_tokens(&mut r, 30, 10));
            if i % 4 == 0 {
                x.positions = Some(x.tokens.len().min(3));
            }
            x
        })
        .collect()
}

#[test]
fn footnote_example() {
    let p = ProbDist::new(vec![0.7, 0.2, 0.1]).unwrap();
    let q = ProbDist::new(vec![0.5, 0.1, 0.4]).unwrap();
    assert!((tv_distance(&p, &q).unwrap() - 0.6).abs() < 1e-15);
    assert!((kl_divergence(&p, &q).unwrap() - kl_divergence(&q, &p).unwrap()).abs() > 1e-3);
}

#[test]
fn kl_of_point_mass_against_uniform_is_ln2() {
    let p = ProbDist::new(vec![1.0, 0.0]).unwrap();
    let q = ProbDist::new(vec![0.5, 0.5]).unwrap();
    assert!((kl_divergence(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn tv_is_symmetric_kl_is_not_on_random_models() {
    for seed in 0..5 {
        let a = jittered(model(30, 5, 3, 4, seed), seed, 1.0);
        let b = jittered(model(30, 5, 3, 4, seed + 50), seed + 50, 1.0);
        let xs = corpus(seed, 40);
        let ab = estimate_ate(&a, &b, &xs, AteMetric::TotalVariation, "d").unwrap().value;
        let ba = estimate_ate(&b, &a, &xs, AteMetric::TotalVariation, "d").unwrap().value;
        assert!((ab - ba).abs() < 1e-12);
        let kab = estimate_ate(&a, &b, &xs, AteMetric::Kl, "d").unwrap().value;
        let kba = estimate_ate(&b, &a, &xs, AteMetric::Kl, "d").unwrap().value;
        assert!((kab - kba).abs() > 1e-6, "seed {seed}: {kab} vs {kba}");
    }
}

#[test]
fn estimate_equals_naive_loop_and_ignores_order() {
    let base = jittered(model(30, 5, 3, 6, 1), 2, 0.5);
    let cand = compress(&base, &CandidateSpec::new([2, 5]).unwrap()).unwrap();
    let mut xs = corpus(9, 60);
    for metric in [AteMetric::TotalVariation, AteMetric::Kl] {
        let mut naive = 0.0;
        for x in &xs {
            let p = base.forward(x).unwrap();
            let q = cand.forward(x).unwrap();
            let mut within = 0.0;
            for (a, b) in p.iter().zip(&q) {
                within += match metric {
                    AteMetric::TotalVariation => {
                        a.as_slice().iter().zip(b.as_slice()).map(|(u, v)| (u - v).abs()).sum()
                    }
                    AteMetric::Kl => kl_divergence(a, b).unwrap(),
                };
            }
            naive += within / p.len() as f64;
        }
        naive /= xs.len() as f64;
        let got = estimate_ate(&base, &cand, &xs, metric, "d").unwrap();
        assert!((got.value - naive).abs() < 1e-12);
        assert_eq!(got.n_examples, xs.len());

        xs.shuffle(&mut common::rng(4));
        let shuffled = estimate_ate(&base, &cand, &xs, metric, "d").unwrap().value;
        assert!((shuffled - naive).abs() < 1e-12);
    }
}

#[test]
fn multi_position_example_counts_once() {
    let base = jittered(model(30, 5, 2, 3, 1), 2, 0.5);
    let cand = compress(&base, &CandidateSpec::new([2]).unwrap()).unwrap();
    let mut x = Example::unlabeled(vec![3, 7, 11, 4]);
    x.positions = Some(2);
    let per_pos: Vec<f64> = base
        .forward(&x)
        .unwrap()
        .iter()
        .zip(cand.forward(&x).unwrap().iter())
        .map(|(p, q)| tv_distance(p, q).unwrap())
        .collect();
    assert_eq!(per_pos.len(), 2);
    let effect = example_effect(&base, &cand, &x, AteMetric::TotalVariation).unwrap();
    assert!((effect - (per_pos[0] + per_pos[1]) / 2.0).abs() < 1e-15);
    let single = Example::unlabeled(vec![5]);
    let e2 = example_effect(&base, &cand, &single, AteMetric::TotalVariation).unwrap();
    let ate = estimate_ate(&base, &cand, &[x, single], AteMetric::TotalVariation, "d").unwrap();
    assert!((ate.value - (effect + e2) / 2.0).abs() < 1e-15);
}
