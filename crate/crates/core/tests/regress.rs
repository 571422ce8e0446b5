mod common;

use common::{brute_stepwise, gaussian, names, random_design, rational_oracle};

use amoc_core::regress::dist::{student_t_cdf, two_sided_p_value};
use amoc_core::regress::{adjusted_r2, ols_fit, stepwise_fit, DesignMatrix};
use amoc_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[test]
fn coefficients_match_exact_rational_oracle() {
    for seed in 0..5 {
        let mut r = common::rng(seed);
        let n = 50;
        let cols: Vec<Vec<f64>> = (0..3).map(|_| gaussian(&mut r, n, 1.0)).collect();
        let y = gaussian(&mut r, n, 1.0);
        let d = DesignMatrix::new(names(3), cols, y).unwrap();
        let fit = ols_fit(&d, &[0, 1, 2]).unwrap();
        let oracle = rational_oracle(&d, &[0, 1, 2]);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn exact_line_and_duplicate_column() {
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let d = DesignMatrix::new(names(1), vec![x.clone()], y.clone()).unwrap();
    let fit = ols_fit(&d, &[0]).unwrap();
    assert!(fit.coefficients[0].abs() < 1e-12 && (fit.coefficients[1] - 2.0).abs() < 1e-12);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    assert!(fit.residuals.iter().all(|e| e.abs() < 1e-12));
    let dup = DesignMatrix::new(names(2), vec![x.clone(), x], y).unwrap();
    assert!(matches!(ols_fit(&dup, &[0, 1]), Err(Error::Singular { .. })));
}

#[test]
fn t_distribution_matches_reference_cdf() {
    let points = [
        (0.0, 1.0),
        (0.5, 2.0),
        (-1.3, 3.0),
        (2.1, 5.0),
        (-2.9, 7.5),
        (1.96, 30.0),
        (3.5, 12.0),
        (-0.7, 100.0),
        (6.0, 4.0),
        (-4.2, 250.0),
    ];
    for (t, dof) in points {
        let reference = StudentsT::new(0.0, 1.0, dof).unwrap();
        let cdf = reference.cdf(t);
        assert!((student_t_cdf(t, dof) - cdf).abs() < 1e-6, "cdf({t}, {dof})");
        let p = 2.0 * reference.cdf(-t.abs());
        assert!((two_sided_p_value(t, dof) - p).abs() < 1e-6, "p({t}, {dof})");
    }
}

#[test]
fn adjusted_r2_formula() {
    let x1 = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let x2 = vec![2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 9.0];
    let y = vec![1.1, 1.9, 3.2, 3.8, 5.3, 5.9, 7.4];
    let d = DesignMatrix::new(names(2), vec![x1, x2], y.clone()).unwrap();
    let fit = ols_fit(&d, &[0, 1]).unwrap();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr: f64 = fit.residuals.iter().map(|e| e * e).sum();
    let r2 = 1.0 - ssr / sst;
    assert!((fit.r2 - r2).abs() < 1e-12);
    let want = 1.0 - (1.0 - r2) * (7.0 - 1.0) / (7.0 - 2.0 - 1.0);
    assert!((fit.adjusted_r2 - want).abs() < 1e-12);
    assert!((adjusted_r2(fit.r2, 7, 2) - want).abs() < 1e-12);
}

#[test]
fn stepwise_path_matches_brute_force() {
    let mut lengths = Vec::new();
    for seed in 0..20 {
        let d = random_design(seed, 100, 6);
        let m = stepwise_fit(&d, &(0..6).collect::<Vec<_>>(), 0.01).unwrap();
        let got: Vec<usize> = m.terms.iter().map(|t| d.column_index(&t.name).unwrap()).collect();
        assert_eq!(got, brute_stepwise(&d, 0.01), "design {seed}");
        lengths.push(got.len());
    }
    // The designs exercise both empty and multi-term paths.
    assert!(
        lengths.iter().any(|&l| l >= 2) && lengths.iter().any(|&l| l <= 1),
        "{lengths:?}"
    );
}

#[test]
fn strong_single_signal_is_the_only_entry() {
    let mut r = common::rng(8);
    let x1 = gaussian(&mut r, 200, 1.0);
    let x2 = gaussian(&mut r, 200, 1.0);
    let y: Vec<f64> = x1
        .iter()
        .zip(gaussian(&mut r, 200, 0.01))
        .map(|(a, e)| 3.0 * a + e)
        .collect();
    let d = DesignMatrix::new(names(2), vec![x1, x2], y).unwrap();
    let m = stepwise_fit(&d, &[0, 1], 0.01).unwrap();
    assert_eq!(m.selected_terms(), vec!["x0"]);
    assert_eq!(brute_stepwise(&d, 0.01), vec![0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn residuals_are_orthogonal_to_the_design(seed in 0u64..100_000, k in 1usize..5) {
        let d = random_design(seed, 40, k);
        let terms: Vec<usize> = (0..k).collect();
        let fit = ols_fit(&d, &terms).unwrap();
        let ones = vec![1.0; d.rows()];
        for col in std::iter::once(&ones).chain(&d.columns) {
            let dot: f64 = col.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
            prop_assert!(dot.abs() < 1e-8, "{}", dot);
        }
    }

    #[test]
    fn stepwise_ignores_row_order(seed in 0u64..100_000) {
        let d = random_design(seed, 80, 5);
        let mut perm: Vec<usize> = (0..80).collect();
        perm.shuffle(&mut common::rng(seed ^ 1));
        let all: Vec<usize> = (0..5).collect();
        let a = stepwise_fit(&d, &all, 0.01).unwrap();
        let b = stepwise_fit(&d.permute_rows(&perm), &all, 0.01).unwrap();
        prop_assert_eq!(a.selected_terms(), b.selected_terms());
        prop_assert!((a.intercept.beta - b.intercept.beta).abs() < 1e-10);
        for (x, y) in a.terms.iter().zip(&b.terms) {
            prop_assert!((x.beta - y.beta).abs() < 1e-10);
        }
    }

    #[test]
    fn predictions_reproduce_fitted_values(seed in 0u64..100_000) {
        let d = random_design(seed, 60, 4);
        let m = stepwise_fit(&d, &[0, 1, 2, 3], 0.05).unwrap();
        let idx: Vec<usize> = m.terms.iter().map(|t| d.column_index(&t.name).unwrap()).collect();
        let fit = ols_fit(&d, &idx).unwrap();
        for row in 0..d.rows() {
            let y = m.predict_with(|name| d.column_index(name).map(|c| d.columns[c][row])).unwrap();
            prop_assert!((y - fit.fitted[row]).abs() < 1e-12);
        }
        // The path starts at the intercept-only fit and ends at the model.
        prop_assert_eq!(m.adjusted_r2_path.len(), m.terms.len() + 1);
        prop_assert!((m.adjusted_r2_path.last().unwrap() - m.adjusted_r2).abs() < 1e-15);
    }
}
