//! Low-rank determinantal point processes over structured ground sets.
//!
//! A kernel is `L(x,y) = α·1{x=y} + p(x)^{1/2} φ(x)ᵀ A φ(y) p(y)^{1/2}` with
//! `A = γI + U Diag(θ) Uᵀ`. Likelihoods, normalizers and gradients are computed through
//! the second-moment matrix `Σ = E_p[φφᵀ]`, so their cost depends on the embedding
//! dimension V and rank r rather than on the size of the ground set.

pub mod error;
pub mod eval;
pub mod fourier;
pub mod ground;
pub mod io;
pub mod kernel;
pub mod likelihood;
pub mod linalg;
pub mod optim;
pub mod sampling;
pub mod summarize;

pub use error::{Error, Result};
pub use fourier::FourierSpectrum;
pub use ground::{ElementRef, GroundSet, Observation, SecondMoment};
pub use kernel::{LowRankK, LowRankL};
pub use likelihood::{DppModel, ModelParams, PenaltyConfig, Problem, ThetaParams};
pub use optim::{FitReport, OptimizerConfig, ThetaMode};
