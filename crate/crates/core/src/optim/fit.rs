//! Alternating block fits of (U, θ) and of diagonal Fourier spectra.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsResult, Termination};
use crate::error::{Error, Result};
use crate::fourier::FourierSpectrum;
use crate::likelihood::{
    grad_objective_parts, spectral_objective, ModelParams, PenaltyConfig, Problem, SpectralObservation,
    ThetaContext, ThetaParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub memory: usize,
    pub max_outer: usize,
    pub inner_iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub grad_tol: f64,
    /// Per-block relative decrease below which L-BFGS stops early; 0 disables.
    pub f_rel_tol: f64,
    /// Stop alternating once a full round lowers F by less than this fraction; 0 disables.
    pub outer_tol: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            memory: 10,
            max_outer: 10,
            inner_iters: 100,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-6,
            f_rel_tol: 0.0,
            outer_tol: 0.0,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            memory: self.memory,
            max_iters: self.inner_iters,
            c1: self.c1,
            c2: self.c2,
            grad_tol: self.grad_tol,
            f_rel_tol: self.f_rel_tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lbfgs().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    #[serde(alias = "shared_theta")]
    Shared,
    #[serde(alias = "per_observation_theta")]
    PerObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Init,
    U,
    Theta,
    Spectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub block: Block,
    /// Observation whose θ is being optimized, for per-observation θ blocks.
    pub observation: Option<usize>,
    pub iteration: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub u: DMatrix<f64>,
    pub theta: ThetaParams,
    pub objective: f64,
    pub trace: Vec<TraceEntry>,
    pub round_seconds: Vec<f64>,
    /// How the last U block stopped.
    pub termination: Termination,
    pub line_search_failures: usize,
}

impl FitReport {
    pub fn params(&self) -> ModelParams {
        ModelParams { u: self.u.clone(), theta: self.theta.clone() }
    }
}

/// U with i.i.d. N(0, 1/√V) entries (standard deviation 1/√V) and θ = 1.
pub fn init_params(problem: &Problem, r: usize, mode: ThetaMode, seed: u64) -> Result<ModelParams> {
    if r == 0 {
        return Err(Error::InvalidParameter("rank must be >= 1".into()));
    }
    let v = problem.ground.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (v as f64).sqrt()).expect("positive std");
    let u = DMatrix::from_fn(v, r, |_, _| normal.sample(&mut rng));
    let ones = DVector::from_element(r, 1.0);
    let theta = match mode {
        ThetaMode::Shared => ThetaParams::Shared(ones),
        ThetaMode::PerObservation => ThetaParams::PerObservation(vec![ones; problem.len()]),
    };
    Ok(ModelParams { u, theta })
}

pub fn fit(
    problem: &Problem,
    r: usize,
    pen: &PenaltyConfig,
    cfg: &OptimizerConfig,
    mode: ThetaMode,
) -> Result<FitReport> {
    let init = init_params(problem, r, mode, cfg.seed)?;
    fit_from(problem, init, pen, cfg)
}

fn vec_of(u: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(u.as_slice())
}

fn mat_of(x: &DVector<f64>, v: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(v, r, x.as_slice())
}

/// Alternates U and θ blocks from the given starting point.
pub fn fit_from(
    problem: &Problem,
    init: ModelParams,
    pen: &PenaltyConfig,
    cfg: &OptimizerConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    problem.check_params(&init.u, &init.theta)?;
    let lb = cfg.lbfgs();
    let (v, r) = init.u.shape();
    let ModelParams { mut u, mut theta } = init;
    let mut trace = Vec::new();
    let mut round_seconds = Vec::new();
    let mut termination = Termination::IterationCap;
    let mut failures = 0;
    let mut current = grad_objective_parts(problem, &u, &theta, pen)?.value;
    trace.push(TraceEntry { round: 0, block: Block::Init, observation: None, iteration: 0, objective: current });

    for round in 0..cfg.max_outer {
        let start = Instant::now();
        let before = current;

        let res = lbfgs_minimize(
            |x| {
                let g = grad_objective_parts(problem, &mat_of(x, v, r), &theta, pen)?;
                Ok((g.value, vec_of(&g.u)))
            },
            vec_of(&u),
            &lb,
        )?;
        push_trace(&mut trace, round, Block::U, None, &res.trace);
        failures += usize::from(res.termination == Termination::LineSearchFailed);
        termination = res.termination;
        u = mat_of(&res.x, v, r);

        let (new_theta, value, f) = theta_block(problem, &u, theta, pen, &lb, round, &mut trace)?;
        theta = new_theta;
        current = value;
        failures += f;
        round_seconds.push(start.elapsed().as_secs_f64());
        if cfg.outer_tol > 0.0 && before - current <= cfg.outer_tol * current.abs().max(1.0) {
            break;
        }
    }
    Ok(FitReport {
        u,
        theta,
        objective: current,
        trace,
        round_seconds,
        termination,
        line_search_failures: failures,
    })
}

fn push_trace(trace: &mut Vec<TraceEntry>, round: usize, block: Block, obs: Option<usize>, values: &[f64]) {
    for (k, &objective) in values.iter().enumerate().skip(1) {
        trace.push(TraceEntry { round, block, observation: obs, iteration: k, objective });
    }
}

fn theta_block(
    problem: &Problem,
    u: &DMatrix<f64>,
    theta: ThetaParams,
    pen: &PenaltyConfig,
    lb: &LbfgsConfig,
    round: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<(ThetaParams, f64, usize)> {
    let ctx = ThetaContext::new(problem, u, pen)?;
    match theta {
        ThetaParams::Shared(t) => {
            let res = lbfgs_minimize(
                |eta| {
                    let th = eta.map(f64::exp);
                    let (val, g) = ctx.shared(problem, &th, pen)?;
                    Ok((val, g.component_mul(&th)))
                },
                t.map(f64::ln),
                lb,
            )?;
            push_trace(trace, round, Block::Theta, None, &res.trace);
            let failed = usize::from(res.termination == Termination::LineSearchFailed);
            Ok((ThetaParams::Shared(res.x.map(f64::exp)), res.value, failed))
        }
        ThetaParams::PerObservation(ts) => {
            let results: Vec<LbfgsResult> = ts
                .par_iter()
                .enumerate()
                .map(|(i, t)| optimize_term(&ctx, problem, i, t, pen, lb))
                .collect::<Result<_>>()?;
            // Emit the full objective in observation order as each block progresses.
            let mut terms: Vec<f64> = results.iter().map(|r| r.trace[0]).collect();
            let total = |terms: &[f64]| ctx.group_term + terms.iter().sum::<f64>();
            for (i, res) in results.iter().enumerate() {
                for (k, &t) in res.trace.iter().enumerate().skip(1) {
                    terms[i] = t;
                    trace.push(TraceEntry {
                        round,
                        block: Block::Theta,
                        observation: Some(i),
                        iteration: k,
                        objective: total(&terms),
                    });
                }
            }
            let failed = results.iter().filter(|r| r.termination == Termination::LineSearchFailed).count();
            let value = total(&terms);
            let thetas = results.into_iter().map(|r| r.x.map(f64::exp)).collect();
            Ok((ThetaParams::PerObservation(thetas), value, failed))
        }
    }
}

fn optimize_term(
    ctx: &ThetaContext,
    problem: &Problem,
    i: usize,
    theta: &DVector<f64>,
    pen: &PenaltyConfig,
    lb: &LbfgsConfig,
) -> Result<LbfgsResult> {
    lbfgs_minimize(
        |eta| {
            let th = eta.map(f64::exp);
            let (val, g) = ctx.term(problem, i, &th, pen)?;
            Ok((val, g.component_mul(&th)))
        },
        theta.map(f64::ln),
        lb,
    )
}

/// Runs only the θ block(s) with U held fixed, e.g. to fit a new document's topic weights.
pub fn optimize_theta(
    problem: &Problem,
    u: &DMatrix<f64>,
    theta: ThetaParams,
    pen: &PenaltyConfig,
    cfg: &OptimizerConfig,
) -> Result<ThetaParams> {
    cfg.validate()?;
    problem.check_params(u, &theta)?;
    let mut scratch = Vec::new();
    Ok(theta_block(problem, u, theta, pen, &cfg.lbfgs(), 0, &mut scratch)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumFitReport {
    pub spectrum: FourierSpectrum,
    pub objective: f64,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub termination: Termination,
    pub seconds: f64,
}

/// Fits a nonnegative diagonal spectrum by L-BFGS on log a, for `max_outer · inner_iters`
/// iterations at most.
pub fn fit_spectrum(
    obs: &[SpectralObservation],
    init: &FourierSpectrum,
    pen: &PenaltyConfig,
    cfg: &OptimizerConfig,
) -> Result<SpectrumFitReport> {
    cfg.validate()?;
    init.validate()?;
    if init.a.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidParameter("initial spectrum must be strictly positive".into()));
    }
    let start = Instant::now();
    let lb = LbfgsConfig { max_iters: cfg.inner_iters * cfg.max_outer, ..cfg.lbfgs() };
    let x0 = DVector::from_iterator(init.a.len(), init.a.iter().map(|a| a.ln()));
    let res = lbfgs_minimize(
        |eta| {
            let a = eta.map(f64::exp);
            let (val, g) = spectral_objective(obs, &a, pen)?;
            Ok((val, g.component_mul(&a)))
        },
        x0,
        &lb,
    )?;
    let spectrum = FourierSpectrum::new(init.m, init.d, res.x.iter().map(|e| e.exp()).collect())?;
    Ok(SpectrumFitReport {
        spectrum,
        objective: res.value,
        trace: res.trace,
        termination: res.termination,
        seconds: start.elapsed().as_secs_f64(),
    })
}
