//! Quasi-Newton and stochastic optimizers for the penalized likelihood.

pub mod fit;
pub mod lbfgs;
pub mod sgd;

pub use fit::{
    fit, fit_from, fit_spectrum, init_params, optimize_theta, Block, FitReport, OptimizerConfig,
    SpectrumFitReport, ThetaMode, TraceEntry,
};
pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsResult, Termination};
pub use sgd::{batch_gradient, epoch_batches, sgd_minimize, SgdConfig, StepSchedule};
