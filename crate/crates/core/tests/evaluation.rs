mod common;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use subdpp::eval::{best_diagonal_baseline, chance_level, loglik_gap, mean_stderr, subspace_distance};
use subdpp::likelihood::log_likelihood;
use subdpp::sampling::{build_dense, sample_observation, DEFAULT_CAP};
use subdpp::{GroundSet, LowRankL, Observation};

#[test]
fn distance_invariant_to_column_mixing() {
    let mut g = rng(1);
    let u = gaussian(20, 4, 1.0, &mut g);
    let target = gaussian(20, 3, 1.0, &mut g);
    let d0 = subspace_distance(&u, &target).unwrap().value;
    for _ in 0..50 {
        let mix = gaussian(4, 4, 1.0, &mut g) + DMatrix::identity(4, 4) * 0.5;
        if mix.determinant().abs() < 1e-3 {
            continue;
        }
        let d = subspace_distance(&(&u * mix), &target).unwrap().value;
        assert!((d - d0).abs() < 1e-10);
    }
    let c: f64 = 7.3;
    assert!((subspace_distance(&(&u / c.sqrt()), &target).unwrap().value - d0).abs() < 1e-12);
}

#[test]
fn distance_zero_exactly_on_containment() {
    let mut g = rng(2);
    let target = gaussian(15, 2, 1.0, &mut g);
    let extra = gaussian(15, 3, 1.0, &mut g);
    let u = DMatrix::from_columns(&[extra.column(0), target.column(1), extra.column(1), target.column(0), extra.column(2)]);
    assert!(subspace_distance(&u, &target).unwrap().value < 1e-12);
    let partial = DMatrix::from_columns(&[target.column(0), extra.column(0)]);
    assert!(subspace_distance(&partial, &target).unwrap().value > 1e-3);
    let d = subspace_distance(&extra, &target).unwrap().value;
    assert!((0.0..=1.0).contains(&d));
}

#[test]
fn squared_distance_chance_matches_formula() {
    for (v, r) in [(100, 5), (30, 10), (10, 6)] {
        let c = chance_level(v, r, 10_000, 3).unwrap();
        assert!((c.mean_d2 - c.analytic).abs() < 3.0 * c.stderr_d2, "{v} {r}: {c:?}");
        assert!(c.mean_d >= c.mean_d2);
    }
}

#[test]
fn perturbed_model_has_positive_gap() {
    let truth = random_items(10, 3, 0.05, 0.0, 4);
    let dense = build_dense(&truth, DEFAULT_CAP).unwrap();
    let mut g = rng(5);
    let test: Vec<Observation> = (0..20_000).map(|_| sample_observation(&dense, &mut g)).collect();
    let mut theta = truth.theta.clone();
    theta[0] *= 3.0;
    let fitted = truth.with_theta(theta);
    let diffs: Vec<f64> = test
        .iter()
        .map(|x| log_likelihood(&truth, x).unwrap() - log_likelihood(&fitted, x).unwrap())
        .collect();
    let (mean, se) = mean_stderr(diffs.into_iter());
    let gap = loglik_gap(&fitted, &truth, &test).unwrap();
    assert!((gap - mean).abs() < 1e-10);
    assert!(gap > 3.0 * se, "{gap} vs {se}");
    assert_eq!(loglik_gap(&truth, &truth, &test).unwrap(), 0.0);
}

#[test]
fn baseline_matches_grid_search() {
    let mut g = rng(6);
    let ground = GroundSet::items(50).unwrap();
    let corpus: Vec<Observation> = (0..40)
        .map(|_| {
            let k = g.random_range(0..8);
            Observation::Items(random_subset(50, k, &mut g))
        })
        .collect();
    let b = best_diagonal_baseline(&corpus, &ground).unwrap();
    let kbar = corpus.iter().map(|x| x.len() as f64).sum::<f64>() / corpus.len() as f64;
    let f = |eta: f64| kbar * eta.ln() - 50.0 * eta.ln_1p();
    let grid_best = (1..100_000).map(|i| i as f64 * 1e-4).fold((0.0, f64::NEG_INFINITY), |acc, eta| {
        let v = f(eta);
        if v > acc.1 { (eta, v) } else { acc }
    });
    assert!((b.eta - grid_best.0).abs() <= 1e-4);
    assert!((b.eta - kbar / (50.0 - kbar)).abs() < 1e-6);
    let model = subdpp::likelihood::ScaledIdentity { eta: b.eta, n: 50 };
    let l = LowRankL::new(ground, 0.0, b.eta, DMatrix::zeros(50, 0), nalgebra::DVector::zeros(0)).unwrap();
    for x in corpus.iter().take(5) {
        let a = subdpp::DppModel::log_likelihood(&model, x).unwrap();
        assert!((a - log_likelihood(&l, x).unwrap()).abs() < 1e-9);
    }
}
