mod common;

use std::collections::BTreeSet;
use std::path::Path;

use amoc_core::compress::CandidateSpec;
use amoc_core::datagen::{ShiftSpec, SplitSizes};
use amoc_core::features::CandidateRecord;
use amoc_core::netcore::TrainConfig;
use amoc_core::pipeline::{
    fit_selector, ordered_pairs, pair_features, pair_folds, prepare_source, rank_candidates, run_all,
    select_for_unseen_pair, train_base, training_pairs, AuditedDomain, DataSource, ExperimentConfig, FoldConfig,
    ModelShape, Split,
};
use amoc_core::regress::{InterceptStats, RegressionModel, TermStats};
use proptest::prelude::*;
use rand::Rng;

fn tiny_config(out: &Path, n_domains: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        name: "tiny".into(),
        seed,
        data: DataSource::Synthetic(ShiftSpec {
            vocab_size: 300,
            n_domains,
            shift_strength: 0.6,
            sizes: SplitSizes {
                train: 120,
                dev: 60,
                test: 60,
                unlabeled: 20,
            },
            seed,
            ..ShiftSpec::default()
        }),
        model: ModelShape { hidden: 8, depth: 4 },
        sizes: vec![1, 2],
        count_per_size: 3,
        folds: FoldConfig { count: 6, seed },
        output_dir: out.to_path_buf(),
        jobs: Some(2),
        ..ExperimentConfig::default()
    };
    c.base.epochs = 2;
    c.domain_classifier.train.epochs = 3;
    c
}

#[test]
fn three_domains_two_sizes_five_each_give_sixty_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path(), 3, 1);
    config.model.depth = 6;
    config.sizes = vec![2, 3];
    config.count_per_size = 5;
    let (domains, dims) = config.load_domains().unwrap();
    let mut total = 0;
    for s in &domains {
        let source = AuditedDomain::new(s);
        let base = train_base(&config, dims, &source).unwrap();
        let artifacts = prepare_source(&config, &base, &source).unwrap();
        for t in domains.iter().filter(|t| t.name != s.name) {
            let target = AuditedDomain::new(t);
            let f = pair_features(&config, &artifacts, &source, &target).unwrap();
            assert_eq!(f.records.len() + f.failures.len(), 10);
            total += f.records.len();
        }
    }
    assert_eq!(total, 60);
}

#[test]
fn divergent_candidates_are_recorded_as_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path(), 2, 2);
    config.candidate = TrainConfig {
        optimizer: amoc_core::netcore::Optimizer::Sgd,
        learning_rate: 1e300,
        ..config.candidate.clone()
    };
    let (domains, dims) = config.load_domains().unwrap();
    let source = AuditedDomain::new(&domains[0]);
    let base = train_base(&config, dims, &source).unwrap();
    let artifacts = prepare_source(&config, &base, &source).unwrap();
    let expected = config.sizes.len() * config.count_per_size;
    assert_eq!(artifacts.candidates.len() + artifacts.failures.len(), expected);
    assert!(!artifacts.failures.is_empty());
    for f in &artifacts.failures {
        assert_eq!(f.stage, "finetune");
        assert!(f.error.contains("diverged"), "{}", f.error);
        CandidateSpec::parse(&f.spec).unwrap();
    }
}

#[test]
fn selection_reads_no_target_labels() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), 2, 3);
    let (domains, dims) = config.load_domains().unwrap();
    let source = AuditedDomain::new(&domains[0]);
    let base = train_base(&config, dims, &source).unwrap();
    let artifacts = prepare_source(&config, &base, &source).unwrap();
    let target = AuditedDomain::new(&domains[1]);
    let selector = RegressionModel {
        intercept: InterceptStats {
            beta: 0.0,
            se: 0.0,
            t: 0.0,
            p: 0.0,
        },
        terms: vec![term("f1_s", 1.0), term("ate_t", -1.0)],
        r2: 0.0,
        adjusted_r2: 0.0,
        n: 0,
        alpha: 0.01,
        adjusted_r2_path: vec![],
    };
    let selection = select_for_unseen_pair(&config, &artifacts, &source, &target, &selector).unwrap();
    assert_eq!(target.label_reads(), 0);
    let splits: BTreeSet<String> = target.log().iter().map(|a| format!("{:?}", a.split)).collect();
    assert!(!splits.contains(&format!("{:?}", Split::Test)));
    assert!(selection.records.iter().all(|r| r.target_f1.is_none()));
    assert_eq!(selection.ranked.len(), artifacts.candidates.len());
}

fn term(name: &str, beta: f64) -> TermStats {
    TermStats {
        name: name.into(),
        beta,
        se: 0.0,
        t: 0.0,
        p: 0.0,
        entry_p: 0.0,
        delta_r2: 0.0,
    }
}

fn synthetic_records(seed: u64, n: usize, response: impl Fn(&CandidateRecord, f64) -> f64) -> Vec<CandidateRecord> {
    let mut r = common::rng(seed);
    let specs = amoc_core::compress::sample_candidate_specs(6, &[2, 3, 4], 20, seed).unwrap();
    (0..n)
        .map(|i| {
            let spec = specs[i % specs.len()].clone();
            let p = [0.2, 0.5, 0.7, 0.9][i % 4];
            let f1 = r.random_range(0.5..0.9);
            let ate_t = r.random_range(0.0..0.4);
            let mut rec = CandidateRecord {
                pair_id: format!("p{}", i % 4),
                size_indicators: [(3, spec.size() == 3), (4, spec.size() == 4)].into(),
                spec,
                ate_source: r.random_range(0.0..0.4),
                ate_target: ate_t,
                ate_metric: Default::default(),
                f1_source: f1,
                p_s_given_t: p,
                ate_t_x_p_s_t: ate_t * p,
                f1_s_x_p_s_t: f1 * p,
                target_f1: None,
                model_path: String::new(),
            };
            let noise = r.random_range(-1.0..1.0);
            rec.target_f1 = Some(response(&rec, noise));
            rec
        })
        .collect()
}

#[test]
fn selector_recovers_identity_on_source_f1() {
    let records = synthetic_records(4, 200, |r, _| r.f1_source);
    let m = fit_selector(&records, 0.01).unwrap();
    assert_eq!(m.terms[0].name, "f1_s");
    let beta = m.terms.iter().find(|t| t.name == "f1_s").unwrap().beta;
    assert!((beta - 1.0).abs() < 1e-6, "{beta}");
    for r in &records {
        assert!((m.predict(r).unwrap() - r.f1_source).abs() < 1e-9);
    }
}

#[test]
fn noise_gives_intercept_only_and_source_f1_breaks_ties() {
    let records = synthetic_records(5, 120, |_, e| 0.7 + 0.01 * e);
    let m = fit_selector(&records, 1e-4).unwrap();
    assert!(m.terms.is_empty(), "{:?}", m.selected_terms());
    let ranked = rank_candidates(&m, &records).unwrap();
    let best = records.iter().map(|r| r.f1_source).fold(f64::MIN, f64::max);
    assert_eq!(ranked[0].f1_source, best);
}

#[test]
fn dominant_candidate_is_chosen() {
    let mut records = synthetic_records(6, 30, |_, _| 0.0);
    for r in &mut records {
        r.pair_id = "s__t".into();
        r.p_s_given_t = 0.5;
    }
    let d = records.len() - 1;
    records[d].f1_source = 0.99;
    records[d].ate_target = 0.0;
    records[d].ate_source = 0.0;
    let selector = RegressionModel {
        intercept: InterceptStats {
            beta: 0.1,
            se: 0.0,
            t: 0.0,
            p: 0.0,
        },
        terms: vec![term("f1_s", 0.8), term("ate_t", -0.5), term("ate_s", -0.2)],
        r2: 0.0,
        adjusted_r2: 0.0,
        n: 0,
        alpha: 0.01,
        adjusted_r2_path: vec![],
    };
    let ranked = rank_candidates(&selector, &records).unwrap();
    assert_eq!(ranked[0].spec, records[d].spec);
}

fn domain_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("d{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn folds_are_domain_disjoint(seed: u64, n in 4usize..7) {
        let pairs = ordered_pairs(&domain_names(n));
        let count = 5.min(pairs.len());
        let folds = pair_folds(&pairs, count, seed).unwrap();
        let all: BTreeSet<_> = folds.iter().flatten().cloned().collect();
        prop_assert_eq!(all.len(), pairs.len());
        prop_assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), pairs.len());
        for (k, fold) in folds.iter().enumerate() {
            for test in fold {
                for train in training_pairs(&folds, k, test) {
                    prop_assert!(!train.shares_domain(test));
                    prop_assert!(!fold.contains(&train));
                }
            }
        }
    }
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap()
}

#[test]
fn run_all_is_deterministic_and_resumable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_all(&tiny_config(a.path(), 4, 7)).unwrap();
    let mut serial = tiny_config(b.path(), 4, 7);
    serial.jobs = Some(1);
    let second = run_all(&serial).unwrap();

    assert_eq!(first.manifest, second.manifest);
    assert_eq!(read(a.path(), "manifest.json"), read(b.path(), "manifest.json"));
    for p in &first.manifest.pairs {
        assert_eq!(read(a.path(), &p.records_path), read(b.path(), &p.records_path));
        assert_eq!(read(a.path(), &p.oracle_path), read(b.path(), &p.oracle_path));
        assert_eq!(p.feature_label_reads, 0);
    }
    let s = &first.manifest.summary;
    assert_eq!(s.n_pairs, 12);
    assert_eq!(s.n_records + s.n_failures, 12 * 2 * 3);
    assert_eq!(first.manifest.selections.len(), 12);

    // Second run over the same directory only reassembles.
    let before = read(a.path(), "manifest.json");
    let again = run_all(&tiny_config(a.path(), 4, 7)).unwrap();
    assert_eq!(again.timings.resumed_pairs.len(), 12);
    assert_eq!(read(a.path(), "manifest.json"), before);

    // A removed pair is recomputed identically.
    let victim = &first.manifest.pairs[3];
    std::fs::remove_file(a.path().join(&victim.records_path)).unwrap();
    let third = run_all(&tiny_config(a.path(), 4, 7)).unwrap();
    assert_eq!(third.timings.resumed_pairs.len(), 11);
    assert_eq!(read(a.path(), "manifest.json"), before);
}
