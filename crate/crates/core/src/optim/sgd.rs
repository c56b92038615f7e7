//! Mini-batch stochastic gradient on U with θ held fixed.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::{Block, FitReport, TraceEntry};
use super::lbfgs::Termination;
use crate::error::{Error, Result};
use crate::likelihood::{grad_objective_parts, ModelParams, PenaltyConfig, Problem, ThetaParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant(f64),
    /// ρₜ = ρ₀ / (1 + decay·t)
    InverseTime { rho0: f64, decay: f64 },
}

impl StepSchedule {
    pub fn step(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant(rho) => rho,
            StepSchedule::InverseTime { rho0, decay } => rho0 / (1.0 + decay * t as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub batch: usize,
    pub epochs: usize,
    pub step: StepSchedule,
    pub seed: u64,
}

fn theta_subset(theta: &ThetaParams, idx: &[usize]) -> ThetaParams {
    match theta {
        ThetaParams::Shared(t) => ThetaParams::Shared(t.clone()),
        ThetaParams::PerObservation(ts) => {
            ThetaParams::PerObservation(idx.iter().map(|&i| ts[i].clone()).collect())
        }
    }
}

/// `G_D(U) = -(1/|D|) Σ_{i∈D} ∇_U ℓ(Xᵢ) + λ ∇_U R_U(U)` for the observations in `idx`.
pub fn batch_gradient(
    problem: &Problem,
    u: &DMatrix<f64>,
    theta: &ThetaParams,
    idx: &[usize],
    pen: &PenaltyConfig,
) -> Result<DMatrix<f64>> {
    if idx.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let sub = problem.subset(idx);
    Ok(grad_objective_parts(&sub, u, &theta_subset(theta, idx), pen)?.u)
}

/// The batches of one epoch: a seeded shuffle cut into chunks, each chunk sorted.
pub fn epoch_batches(m: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order
        .chunks(batch)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect()
}

/// `U ← U - ρₜ G_{Dₜ}(U)`; the trace holds the full-corpus objective after every epoch.
pub fn sgd_minimize(
    problem: &Problem,
    init: ModelParams,
    pen: &PenaltyConfig,
    cfg: &SgdConfig,
) -> Result<FitReport> {
    if cfg.batch == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    problem.check_params(&init.u, &init.theta)?;
    let ModelParams { mut u, theta } = init;
    let full = |u: &DMatrix<f64>| grad_objective_parts(problem, u, &theta, pen).map(|g| g.value);
    let mut objective = full(&u)?;
    let mut trace =
        vec![TraceEntry { round: 0, block: Block::Init, observation: None, iteration: 0, objective }];
    let mut round_seconds = Vec::new();
    let mut t = 0;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        for idx in epoch_batches(problem.len(), cfg.batch, cfg.seed, epoch) {
            let g = batch_gradient(problem, &u, &theta, &idx, pen)?;
            u -= g * cfg.step.step(t);
            t += 1;
        }
        objective = full(&u)?;
        trace.push(TraceEntry { round: epoch, block: Block::U, observation: None, iteration: t, objective });
        round_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(FitReport {
        u,
        theta,
        objective,
        trace,
        round_seconds,
        termination: Termination::IterationCap,
        line_search_failures: 0,
    })
}
