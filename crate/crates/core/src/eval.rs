//! Metrics and baselines: subspace distance, chance level, likelihood gaps and the best
//! scaled-identity model.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground::{GroundSet, Observation};
use crate::likelihood::DppModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubspaceDistance {
    pub value: f64,
    /// U had numerically dependent columns and a pseudo-inverse was used.
    pub rank_deficient: bool,
}

/// `D(U, U*) = ‖P_U U* - U*‖_F / ‖U*‖_F` with `P_U` the orthogonal projector onto col(U).
pub fn subspace_distance(u: &DMatrix<f64>, u_star: &DMatrix<f64>) -> Result<SubspaceDistance> {
    if u.nrows() != u_star.nrows() {
        return Err(Error::DimensionMismatch { expected: u_star.nrows(), found: u.nrows() });
    }
    let denom = u_star.norm();
    if denom == 0.0 {
        return Err(Error::InvalidParameter("reference subspace is zero".into()));
    }
    let q = column_basis(u);
    let rank_deficient = q.ncols() < u.ncols();
    let residual = u_star - &q * (q.transpose() * u_star);
    Ok(SubspaceDistance { value: residual.norm() / denom, rank_deficient })
}

/// Row signs `s` for which `Diag(s) L* Diag(s)` best matches `L` off the diagonal, by
/// coordinate ascent on `Σᵢⱼ sᵢ sⱼ Lᵢⱼ L*ᵢⱼ` from `s = 1`. Item kernels related by such a
/// flip define the same DPP, so col(U*) itself is only identified up to these signs.
pub fn align_signs(l: &DMatrix<f64>, l_star: &DMatrix<f64>) -> Vec<f64> {
    let n = l.nrows();
    let mut s = vec![1.0; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let t: f64 = (0..n).filter(|&j| j != i).map(|j| l[(i, j)] * l_star[(i, j)] * s[j]).sum();
            let want = if t < 0.0 { -1.0 } else { 1.0 };
            if want != s[i] {
                s[i] = want;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    s
}

/// [`subspace_distance`] after flipping the rows of U* by [`align_signs`] applied to the
/// kernels `U Diag(θ) Uᵀ` and `U* Diag(θ*) U*ᵀ`.
pub fn sign_aligned_distance(
    u: &DMatrix<f64>,
    theta: &[f64],
    u_star: &DMatrix<f64>,
    theta_star: &[f64],
) -> Result<SubspaceDistance> {
    let gram = |u: &DMatrix<f64>, t: &[f64]| {
        let scaled = DMatrix::from_fn(u.nrows(), u.ncols(), |i, k| u[(i, k)] * t[k]);
        scaled * u.transpose()
    };
    if u.ncols() != theta.len() || u_star.ncols() != theta_star.len() {
        return Err(Error::DimensionMismatch { expected: u.ncols(), found: theta.len() });
    }
    let s = align_signs(&gram(u, theta), &gram(u_star, theta_star));
    let flipped = DMatrix::from_fn(u_star.nrows(), u_star.ncols(), |i, k| s[i] * u_star[(i, k)]);
    subspace_distance(u, &flipped)
}

/// Orthonormal basis of col(U) from the SVD, dropping singular values below the usual
/// pseudo-inverse cutoff `max(V, r)·ε·σ_max`.
pub fn column_basis(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (v, r) = u.shape();
    if r == 0 {
        return DMatrix::zeros(v, 0);
    }
    let svd = u.clone().svd(true, false);
    let left = svd.u.expect("requested U");
    let top = svd.singular_values.max();
    let cut = (v.max(r) as f64) * f64::EPSILON * top;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| top > 0.0 && svd.singular_values[k] > cut)
        .collect();
    DMatrix::from_fn(v, keep.len(), |i, c| left[(i, keep[c])])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceLevel {
    /// 1 - r/V
    pub analytic: f64,
    pub mean_d: f64,
    pub stderr_d: f64,
    pub mean_d2: f64,
    pub stderr_d2: f64,
}

/// Distance of a fixed direction from the span of r i.i.d. Gaussian columns, averaged over
/// `trials` draws. E[D²] = 1 - r/V exactly; E[D] is reported alongside.
pub fn chance_level(v: usize, r: usize, trials: usize, seed: u64) -> Result<ChanceLevel> {
    if r > v || v == 0 {
        return Err(Error::InvalidParameter("need r <= V and V >= 1".into()));
    }
    let analytic = 1.0 - r as f64 / v as f64;
    if trials == 0 {
        let nan = f64::NAN;
        return Ok(ChanceLevel { analytic, mean_d: nan, stderr_d: nan, mean_d2: nan, stderr_d2: nan });
    }
    let mut target = DMatrix::zeros(v, 1);
    target[(0, 0)] = 1.0;
    let ds: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let z = DMatrix::from_fn(v, r, |_, _| StandardNormal.sample(&mut rng));
            subspace_distance(&z, &target).map(|d| d.value)
        })
        .collect::<Result<_>>()?;
    let (mean_d, stderr_d) = mean_stderr(ds.iter().copied());
    let (mean_d2, stderr_d2) = mean_stderr(ds.iter().map(|d| d * d));
    Ok(ChanceLevel { analytic, mean_d, stderr_d, mean_d2, stderr_d2 })
}

/// Sample mean and its standard error.
pub fn mean_stderr<I: Iterator<Item = f64>>(xs: I) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean test log-likelihood of `truth` minus that of `fitted`.
pub fn loglik_gap(fitted: &dyn DppModel, truth: &dyn DppModel, test: &[Observation]) -> Result<f64> {
    Ok(truth.mean_log_likelihood(test)? - fitted.mean_log_likelihood(test)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagonalBaseline {
    pub eta: f64,
    /// Mean log-likelihood of the corpus under ηI.
    pub log_likelihood: f64,
    /// The maximizer sits at an end of the search interval.
    pub boundary: bool,
}

const LOG_ETA_RANGE: (f64, f64) = (-30.0, 30.0);

/// Ground-set size N (as a float, since hypercubes have 2^V elements).
pub fn ground_size(ground: &GroundSet) -> Result<f64> {
    Ok(match ground {
        GroundSet::Items { v } => *v as f64,
        GroundSet::Hypercube { pi } => 2f64.powi(pi.len() as i32),
        GroundSet::ContinuousFourier { .. } => ground.dim() as f64,
        GroundSet::Integers { .. } => {
            return Err(Error::InvalidParameter("scaled identity needs a finite ground set".into()))
        }
    })
}

/// η* maximizing the mean of `|X| log η - N log(1+η)`, by golden-section search on log η.
pub fn best_diagonal_baseline(corpus: &[Observation], ground: &GroundSet) -> Result<DiagonalBaseline> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = ground_size(ground)?;
    let k = corpus.iter().map(|x| x.len() as f64).sum::<f64>() / corpus.len() as f64;
    let f = |t: f64| k * t - n * t.exp().ln_1p();
    let (mut a, mut b) = LOG_ETA_RANGE;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    let boundary = t - LOG_ETA_RANGE.0 < 1e-6 || LOG_ETA_RANGE.1 - t < 1e-6;
    Ok(DiagonalBaseline { eta: t.exp(), log_likelihood: f(t), boundary })
}

/// Columns whose energy `θₖ‖uₖ‖²` falls below `rel_tol` times the largest column energy.
pub fn negligible_columns(u: &DMatrix<f64>, theta: &[f64], rel_tol: f64) -> usize {
    let energy: Vec<f64> = u.column_iter().zip(theta).map(|(c, t)| t * c.norm_squared()).collect();
    let top = energy.iter().fold(0.0_f64, |m, &e| m.max(e));
    energy.iter().filter(|&&e| e <= rel_tol * top).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub r: usize,
    #[serde(rename = "V")]
    pub v: usize,
    pub seed: u64,
    pub dataset: String,
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub r: usize,
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

/// Mean and sample variance per (metric, r), in first-seen order.
pub fn aggregate(records: &[MetricRecord]) -> Vec<MetricSummary> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for rec in records {
        let key = (rec.metric.clone(), rec.r);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(metric, r)| {
            let vals: Vec<f64> =
                records.iter().filter(|x| x.metric == metric && x.r == r).map(|x| x.value).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let variance = if vals.len() > 1 {
                vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            MetricSummary { metric, r, mean, variance, count: vals.len() }
        })
        .collect()
}
