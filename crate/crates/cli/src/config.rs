//! Experiment configuration: JSON file plus command-line overrides, hashed for provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subdpp::io::Meta;
use subdpp::sampling::DEFAULT_CAP;
use subdpp::{OptimizerConfig, PenaltyConfig, ThetaMode};

use crate::CliError;

/// Which synthetic ground set to generate from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundSpec {
    Items {
        v: usize,
    },
    /// `pi` defaults to a per-replicate draw from U(0.2, 0.8).
    Hypercube {
        v: usize,
        #[serde(default)]
        pi: Option<Vec<f64>>,
    },
    /// Stationary generator on the `n × n` grid with spectral decay `beta`.
    Fourier {
        n: usize,
        beta: f64,
    },
}

impl GroundSpec {
    pub fn dim(&self) -> usize {
        match self {
            GroundSpec::Items { v } | GroundSpec::Hypercube { v, .. } => *v,
            GroundSpec::Fourier { n, .. } => n * n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ground: GroundSpec,
    /// Rank of the generating model.
    pub r_star: usize,
    pub alpha: f64,
    /// Defaults to 1/V on hypercubes and 0 elsewhere.
    pub gamma: Option<f64>,
    /// Ranks fitted by `fit` and scored by `eval`.
    pub ranks: Vec<usize>,
    pub penalty: PenaltyConfig,
    pub optimizer: OptimizerConfig,
    /// θ variant that `fit` and `eval` work on.
    pub mode: ThetaMode,
    /// Observations per replicate, split into train and test.
    pub samples: usize,
    pub test_fraction: f64,
    /// Range of the uniform draw for generating θ.
    pub theta_range: [f64; 2],
    pub seed: u64,
    pub replicates: usize,
    pub cap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ground: GroundSpec::Items { v: 100 },
            r_star: 5,
            alpha: 1e-5,
            gamma: None,
            ranks: vec![2, 5, 10, 30, 60],
            penalty: PenaltyConfig::default(),
            optimizer: OptimizerConfig::default(),
            mode: ThetaMode::Shared,
            samples: 1000,
            test_fraction: 0.2,
            theta_range: [2.0, 10.0],
            seed: 0,
            replicates: 10,
            cap: DEFAULT_CAP,
        }
    }
}

/// Flags that win over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Experiment config JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated rank sweep, e.g. `2,5,10`.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,
    /// Penalty weight λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<ThetaMode>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Iteration cap of each L-BFGS block.
    #[arg(long)]
    pub inner_iters: Option<usize>,
    /// Number of alternating rounds.
    #[arg(long)]
    pub max_outer: Option<usize>,
}

fn parse_mode(s: &str) -> Result<ThetaMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown mode {s:?}, expected shared or per_observation"))
}

impl Overrides {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => read_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.replicates {
            cfg.replicates = n;
        }
        if let Some(r) = &self.ranks {
            cfg.ranks = r.clone();
        }
        if let Some(l) = self.lambda {
            cfg.penalty.weight = l;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(n) = self.samples {
            cfg.samples = n;
        }
        if let Some(n) = self.inner_iters {
            cfg.optimizer.inner_iters = n;
        }
        if let Some(n) = self.max_outer {
            cfg.optimizer.max_outer = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        let v = self.ground.dim();
        if v == 0 {
            return bad("ground set dimension must be positive");
        }
        if let GroundSpec::Hypercube { v, pi: Some(pi) } = &self.ground {
            if pi.len() != *v {
                return bad("hypercube pi must have v entries");
            }
        }
        if self.r_star == 0 || self.r_star > v {
            return bad("r_star must lie in 1..=V");
        }
        if self.ranks.is_empty() || self.ranks.iter().any(|&r| r == 0 || r > v) {
            return bad("every rank must lie in 1..=V");
        }
        if !(self.alpha >= 0.0) || self.gamma.is_some_and(|g| !(g >= 0.0)) {
            return bad("alpha and gamma must be nonnegative");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)");
        }
        if self.samples < 2 || self.replicates == 0 {
            return bad("need at least two samples and one replicate");
        }
        let [lo, hi] = self.theta_range;
        if !(lo >= 0.0 && hi > lo) {
            return bad("theta_range must be an increasing pair of nonnegative numbers");
        }
        PenaltyConfig::new(self.penalty.weight, self.penalty.smoothing)?;
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        match (&self.ground, self.gamma) {
            (_, Some(g)) => g,
            (GroundSpec::Hypercube { v, .. }, None) => 1.0 / *v as f64,
            _ => 0.0,
        }
    }

    /// α as applied to the ground set; hypercubes cannot carry a diagonal term.
    pub fn alpha(&self) -> f64 {
        match self.ground {
            GroundSpec::Hypercube { .. } => 0.0,
            _ => self.alpha,
        }
    }

    pub fn n_test(&self) -> usize {
        ((self.samples as f64 * self.test_fraction).round() as usize).clamp(1, self.samples - 1)
    }

    /// SHA-256 of the canonical JSON of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn meta(&self) -> Meta {
        Meta::new(self.hash(), self.seed)
    }
}
