mod common;

use common::*;
use nalgebra::DMatrix;
use subdpp::likelihood::{grad_objective, grad_objective_parts};
use subdpp::optim::{
    batch_gradient, fit, fit_from, fit_spectrum, init_params, sgd_minimize, Block, SgdConfig, StepSchedule,
};
use subdpp::sampling::{build_dense, sample_observation, DEFAULT_CAP};
use subdpp::{LowRankL, ModelParams, Observation, OptimizerConfig, PenaltyConfig, Problem, ThetaMode, ThetaParams};

fn sampled_corpus(l: &LowRankL, m: usize, seed: u64) -> Vec<Observation> {
    let d = build_dense(l, DEFAULT_CAP).unwrap();
    let mut g = rng(seed);
    (0..m).map(|_| sample_observation(&d, &mut g)).collect()
}

fn small_cfg(seed: u64) -> OptimizerConfig {
    OptimizerConfig { max_outer: 2, inner_iters: 15, seed, ..Default::default() }
}

fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
}

#[test]
fn fit_is_deterministic() {
    let truth = random_items(10, 2, 0.05, 0.0, 1);
    let corpus = sampled_corpus(&truth, 30, 2);
    let problem = Problem::new(truth.ground.clone(), 0.05, 0.0, &corpus).unwrap();
    let pen = PenaltyConfig::default();
    for mode in [ThetaMode::Shared, ThetaMode::PerObservation] {
        let a = fit(&problem, 3, &pen, &small_cfg(5), mode).unwrap();
        let b = fit(&problem, 3, &pen, &small_cfg(5), mode).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.u, b.u);
        assert_eq!(a.theta, b.theta);
        let values: Vec<f64> = a.trace.iter().map(|e| e.objective).collect();
        assert!(non_increasing(&values));
        assert_eq!(a.trace[0].block, Block::Init);
    }
}

#[test]
fn single_observation_modes_agree() {
    let truth = random_hypercube(6, 2, 1.0 / 6.0, 3);
    let corpus = vec![Observation::Vectors(vec![vec![1, 0, 1, 0, 0, 1], vec![0, 1, 1, 0, 0, 0]])];
    let problem = Problem::new(truth.ground.clone(), 0.0, truth.gamma, &corpus).unwrap();
    let pen = PenaltyConfig::default();
    let a = fit(&problem, 2, &pen, &small_cfg(9), ThetaMode::Shared).unwrap();
    let b = fit(&problem, 2, &pen, &small_cfg(9), ThetaMode::PerObservation).unwrap();
    let strip = |r: &subdpp::FitReport| r.trace.iter().map(|e| (e.round, e.block, e.iteration, e.objective)).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.u, b.u);
    assert_eq!(a.theta.get(0), b.theta.get(0));
}

#[test]
fn true_parameters_are_near_stationary() {
    let truth = random_items(12, 2, 1e-5, 0.0, 4);
    let corpus = sampled_corpus(&truth, 200, 5);
    let problem = Problem::new(truth.ground.clone(), truth.alpha, 0.0, &corpus).unwrap();
    let pen = PenaltyConfig::default();
    let init = ModelParams { u: truth.u.clone(), theta: ThetaParams::Shared(truth.theta.clone()) };
    let f_true = grad_objective(&problem, &init, &pen).unwrap().value;
    let cfg = OptimizerConfig { max_outer: 1, ..Default::default() };
    let rep = fit_from(&problem, init, &pen, &cfg).unwrap();
    assert!(rep.objective <= f_true + 1e-6, "{} vs {f_true}", rep.objective);
}

#[test]
fn init_scale_and_theta() {
    let problem = Problem::new(subdpp::GroundSet::items(400).unwrap(), 0.0, 1.0, &[Observation::Items(vec![1])]).unwrap();
    let p = init_params(&problem, 50, ThetaMode::Shared, 1).unwrap();
    let var = p.u.iter().map(|x| x * x).sum::<f64>() / p.u.len() as f64;
    assert!((var - 1.0 / 400.0).abs() < 0.1 / 400.0);
    assert!(p.theta.get(0).iter().all(|&t| t == 1.0));
}

#[test]
fn sgd_full_batch_is_gradient_descent() {
    let truth = random_items(8, 2, 0.1, 0.0, 6);
    let corpus = sampled_corpus(&truth, 12, 7);
    let problem = Problem::new(truth.ground.clone(), 0.1, 0.0, &corpus).unwrap();
    let pen = PenaltyConfig::default();
    let init = init_params(&problem, 2, ThetaMode::PerObservation, 3).unwrap();
    let rho = 1e-4;
    let cfg = SgdConfig { batch: corpus.len(), epochs: 1, step: StepSchedule::Constant(rho), seed: 1 };
    let rep = sgd_minimize(&problem, init.clone(), &pen, &cfg).unwrap();
    let g = grad_objective_parts(&problem, &init.u, &init.theta, &pen).unwrap();
    assert_eq!(rep.u, &init.u - g.u * rho);

    let still = sgd_minimize(&problem, init.clone(), &pen, &SgdConfig { step: StepSchedule::Constant(0.0), batch: 3, ..cfg }).unwrap();
    assert_eq!(still.u, init.u);
}

#[test]
fn singleton_batches_average_to_full_gradient() {
    let truth = random_hypercube(5, 2, 0.2, 8);
    let corpus = random_corpus(&truth, 6, 2, 9);
    let problem = Problem::new(truth.ground.clone(), 0.0, 0.2, &corpus).unwrap();
    let pen = PenaltyConfig::new(0.1, 1e-8).unwrap();
    let theta = ThetaParams::Shared(truth.theta.clone());
    let mut avg = DMatrix::zeros(5, 2);
    for i in 0..corpus.len() {
        avg += batch_gradient(&problem, &truth.u, &theta, &[i], &pen).unwrap();
    }
    avg /= corpus.len() as f64;
    let full = grad_objective_parts(&problem, &truth.u, &theta, &pen).unwrap().u;
    assert!((avg - &full).abs().max() < 1e-12 * (1.0 + full.abs().max()));
}

#[test]
fn spectrum_fit_decreases_objective() {
    use subdpp::fourier::FourierSpectrum;
    use subdpp::likelihood::SpectralObservation;
    let spec = subdpp::fourier::synth_spectrum(5, 2.0).unwrap();
    let truth = LowRankL::from_spectrum(&spec).unwrap();
    let corpus = sampled_corpus(&truth, 60, 10);
    let obs: Vec<SpectralObservation> = corpus.iter().map(|x| SpectralObservation::new(&truth.ground, x).unwrap()).collect();
    let init = FourierSpectrum::new(2, 2, vec![1.0; 25]).unwrap();
    let cfg = OptimizerConfig { max_outer: 1, inner_iters: 50, ..Default::default() };
    let rep = fit_spectrum(&obs, &init, &PenaltyConfig::default(), &cfg).unwrap();
    assert!(non_increasing(&rep.trace));
    assert!(rep.trace.last().unwrap() < &rep.trace[0]);
}
