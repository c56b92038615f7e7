//! Log-likelihoods of observed subsets, the penalized corpus objective and its analytic
//! gradients with respect to U and θ.
//!
//! For an observation X the restricted kernel factors as
//! `L_X = Diag(p_X)^{1/2} C Diag(p_X)^{1/2}` with the p-free core
//! `C = α Diag(1/p_X) + γ Φ_X Φ_Xᵀ + Z Θ Zᵀ`, `Z = Φ_X U`, so
//! `log det L_X = Σ log p(xᵢ) + log det C` stays finite even when p(x) underflows.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::FourierSpectrum;
use crate::ground::{ElementRef, GroundSet, Observation, SecondMoment};
use crate::kernel::{LowRankL, Normalizer, NormalizerEval};
use crate::linalg::{chol_inverse, chol_logdet, cholesky};

/// Penalty weight λ and the smoothing constant of the group norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub weight: f64,
    pub smoothing: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig { weight: 0.01, smoothing: 1e-8 }
    }
}

impl PenaltyConfig {
    pub fn new(weight: f64, smoothing: f64) -> Result<Self> {
        if !(weight >= 0.0) || !(smoothing > 0.0) {
            return Err(Error::InvalidParameter(
                "penalty weight must be >= 0 and smoothing > 0".into(),
            ));
        }
        Ok(PenaltyConfig { weight, smoothing })
    }

    pub fn none() -> Self {
        PenaltyConfig { weight: 0.0, ..Default::default() }
    }
}

pub fn embed(ground: &GroundSet, x: ElementRef<'_>) -> Result<DVector<f64>> {
    ground.embed(x)
}

/// `L_X` split into its p-free core and the per-element `log p(xᵢ)`.
#[derive(Debug, Clone)]
pub struct LSubmatrix {
    pub core: DMatrix<f64>,
    pub log_p: DVector<f64>,
}

impl LSubmatrix {
    /// The plain `L_X`; may underflow on large hypercubes.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let s = self.log_p.map(|l| (0.5 * l).exp());
        DMatrix::from_fn(self.core.nrows(), self.core.ncols(), |i, j| {
            s[i] * self.core[(i, j)] * s[j]
        })
    }

    pub fn log_det(&self) -> Result<f64> {
        let l = cholesky(&self.core).map_err(|pivot| Error::SingularObservation { pivot })?;
        Ok(self.log_p.sum() + chol_logdet(&l))
    }
}

pub fn l_submatrix(l: &LowRankL, x: &Observation) -> Result<LSubmatrix> {
    let prep = PreparedObservation::new(&l.ground, x)?;
    let z = prep.project(&l.u);
    let mut core = prep.base_core(l.alpha, l.gamma);
    core += crate::linalg::scale_columns(&z, &l.theta) * z.transpose();
    Ok(LSubmatrix { core, log_p: prep.log_p.clone() })
}

/// ℓ(X | L) = log det L_X - log det(L + I).
pub fn log_likelihood(l: &LowRankL, x: &Observation) -> Result<f64> {
    let sub = l_submatrix(l, x)?;
    Ok(sub.log_det()? - crate::kernel::log_det_l_plus_i(l)?)
}

/// Anything that assigns a log-likelihood to an observed subset.
pub trait DppModel {
    fn log_likelihood(&self, x: &Observation) -> Result<f64>;

    fn mean_log_likelihood(&self, corpus: &[Observation]) -> Result<f64> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut acc = 0.0;
        for x in corpus {
            acc += self.log_likelihood(x)?;
        }
        Ok(acc / corpus.len() as f64)
    }
}

impl DppModel for LowRankL {
    fn log_likelihood(&self, x: &Observation) -> Result<f64> {
        log_likelihood(self, x)
    }
}

/// `L = ηI` on a ground set of N items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledIdentity {
    pub eta: f64,
    pub n: usize,
}

impl DppModel for ScaledIdentity {
    fn log_likelihood(&self, x: &Observation) -> Result<f64> {
        Ok(x.len() as f64 * self.eta.ln() - self.n as f64 * self.eta.ln_1p())
    }
}

impl DppModel for FourierSpectrum {
    fn log_likelihood(&self, x: &Observation) -> Result<f64> {
        let ground = GroundSet::continuous_fourier(self.m, self.d)?;
        let prep = SpectralObservation::new(&ground, x)?;
        let a = DVector::from_column_slice(&self.a);
        let (val, _) = prep.log_det_core(&a, false)?;
        Ok(val + prep.log_p_sum - a.iter().map(|v| v.ln_1p()).sum::<f64>())
    }
}

/// Sparse feature rows and base-measure terms of one observation, computed once.
#[derive(Debug, Clone)]
pub struct PreparedObservation {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub log_p: DVector<f64>,
    /// Φ_X Φ_Xᵀ
    pub gram: DMatrix<f64>,
}

impl PreparedObservation {
    pub fn new(ground: &GroundSet, x: &Observation) -> Result<Self> {
        let n = x.len();
        let mut rows = Vec::with_capacity(n);
        let mut log_p = DVector::zeros(n);
        for (i, e) in x.elements().enumerate() {
            rows.push(ground.features(e)?);
            log_p[i] = ground.log_p(e)?;
        }
        let gram = DMatrix::from_fn(n, n, |i, j| sparse_dot(&rows[i], &rows[j]));
        Ok(PreparedObservation { rows, log_p, gram })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Z = Φ_X U
    pub fn project(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let r = u.ncols();
        let mut z = DMatrix::zeros(self.len(), r);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, val) in row {
                for k in 0..r {
                    z[(i, k)] += val * u[(j, k)];
                }
            }
        }
        z
    }

    /// Adds Φ_Xᵀ D to `acc` (V × r).
    pub fn scatter(&self, d: &DMatrix<f64>, acc: &mut DMatrix<f64>) {
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, val) in row {
                for k in 0..d.ncols() {
                    acc[(j, k)] += val * d[(i, k)];
                }
            }
        }
    }

    /// `α Diag(1/p) + γ Φ_X Φ_Xᵀ`
    pub fn base_core(&self, alpha: f64, gamma: f64) -> DMatrix<f64> {
        let mut c = &self.gram * gamma;
        if alpha > 0.0 {
            for i in 0..self.len() {
                c[(i, i)] += alpha * (-self.log_p[i]).exp();
            }
        }
        c
    }
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    // rows are produced in increasing index order
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// θ shared across the corpus, or one θᵢ per observation.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaParams {
    Shared(DVector<f64>),
    PerObservation(Vec<DVector<f64>>),
}

impl ThetaParams {
    pub fn get(&self, i: usize) -> &DVector<f64> {
        match self {
            ThetaParams::Shared(t) => t,
            ThetaParams::PerObservation(ts) => &ts[i],
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, ThetaParams::Shared(_))
    }
}

/// Learned parameters: U and θ (shared or per observation).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub u: DMatrix<f64>,
    pub theta: ThetaParams,
}

/// A corpus together with the fixed parts of the model (ground set, α, γ).
#[derive(Debug, Clone)]
pub struct Problem {
    pub ground: GroundSet,
    pub alpha: f64,
    pub gamma: f64,
    pub second_moment: SecondMoment,
    pub observations: Vec<PreparedObservation>,
    /// α Diag(1/p) + γ ΦΦᵀ per observation
    pub base_cores: Vec<DMatrix<f64>>,
    diagonal_term: f64,
}

impl Problem {
    pub fn new(ground: GroundSet, alpha: f64, gamma: f64, corpus: &[Observation]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        // Validates α against the ground set.
        let probe = LowRankL::new(
            ground.clone(),
            alpha,
            gamma,
            DMatrix::zeros(ground.dim(), 0),
            DVector::zeros(0),
        )?;
        let observations = corpus
            .par_iter()
            .map(|x| PreparedObservation::new(&ground, x))
            .collect::<Result<Vec<_>>>()?;
        let base_cores = observations.iter().map(|o| o.base_core(alpha, gamma)).collect();
        let diagonal_term = crate::kernel::Normalizer::new(&probe)?.base
            - ground.second_moment().log_det_shifted(gamma / (alpha + 1.0));
        Ok(Problem {
            second_moment: ground.second_moment(),
            ground,
            alpha,
            gamma,
            observations,
            base_cores,
            diagonal_term,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// The same model restricted to the observations at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Problem {
        Problem {
            ground: self.ground.clone(),
            alpha: self.alpha,
            gamma: self.gamma,
            second_moment: self.second_moment.clone(),
            observations: idx.iter().map(|&i| self.observations[i].clone()).collect(),
            base_cores: idx.iter().map(|&i| self.base_cores[i].clone()).collect(),
            diagonal_term: self.diagonal_term,
        }
    }

    pub fn rho(&self) -> f64 {
        1.0 / (self.alpha + 1.0)
    }

    pub fn normalizer(&self, u: &DMatrix<f64>) -> Result<Normalizer> {
        Normalizer::from_parts(&self.second_moment, self.rho(), self.gamma, u, self.diagonal_term)
    }

    pub fn model(&self, u: &DMatrix<f64>, theta: &DVector<f64>) -> Result<LowRankL> {
        LowRankL::new(self.ground.clone(), self.alpha, self.gamma, u.clone(), theta.clone())
    }

    pub fn check_params(&self, u: &DMatrix<f64>, theta: &ThetaParams) -> Result<()> {
        let v = self.ground.dim();
        if u.nrows() != v {
            return Err(Error::DimensionMismatch { expected: v, found: u.nrows() });
        }
        let r = u.ncols();
        let check = |t: &DVector<f64>| {
            if t.len() != r {
                return Err(Error::DimensionMismatch { expected: r, found: t.len() });
            }
            if t.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidParameter("theta must be nonnegative".into()));
            }
            Ok(())
        };
        match theta {
            ThetaParams::Shared(t) => check(t),
            ThetaParams::PerObservation(ts) => {
                if ts.len() != self.len() {
                    return Err(Error::DimensionMismatch { expected: self.len(), found: ts.len() });
                }
                ts.iter().try_for_each(check)
            }
        }
    }
}

/// Value and gradients of `log det C` for one observation.
#[derive(Debug, Clone)]
pub struct CoreEval {
    pub log_det: f64,
    /// ∂/∂Z, |X| × r (present when requested)
    pub grad_z: Option<DMatrix<f64>>,
    pub grad_theta: DVector<f64>,
}

/// log det of `base + Z Θ Zᵀ` and its derivatives in Z and θ.
pub fn core_eval(
    base: &DMatrix<f64>,
    z: &DMatrix<f64>,
    theta: &DVector<f64>,
    want_grad_z: bool,
) -> Result<CoreEval> {
    let (n, r) = (z.nrows(), z.ncols());
    if n == 0 {
        return Ok(CoreEval {
            log_det: 0.0,
            grad_z: want_grad_z.then(|| DMatrix::zeros(0, r)),
            grad_theta: DVector::zeros(r),
        });
    }
    let zt = crate::linalg::scale_columns(z, theta);
    let c = base + &zt * z.transpose();
    let l = cholesky(&c).map_err(|pivot| Error::SingularObservation { pivot })?;
    let cinv = chol_inverse(&l);
    let w = &cinv * z;
    let grad_theta = DVector::from_fn(r, |k, _| z.column(k).dot(&w.column(k)));
    let grad_z = want_grad_z.then(|| crate::linalg::scale_columns(&w, theta) * 2.0);
    Ok(CoreEval { log_det: chol_logdet(&l), grad_z, grad_theta })
}

/// Smoothed squared group norm `(Σₖ (√(‖uₖ‖² + ε²) - ε))²` and its gradient.
pub fn group_penalty(u: &DMatrix<f64>, eps: f64) -> (f64, DMatrix<f64>) {
    let mut total = 0.0;
    let mut scales = Vec::with_capacity(u.ncols());
    for col in u.column_iter() {
        let h = (col.norm_squared() + eps * eps).sqrt();
        total += h - eps;
        scales.push(1.0 / h);
    }
    let mut grad = u.clone();
    for (k, mut col) in grad.column_iter_mut().enumerate() {
        col *= 2.0 * total * scales[k];
    }
    (total * total, grad)
}

/// F and its gradients.
#[derive(Debug, Clone)]
pub struct ObjectiveGrad {
    pub value: f64,
    pub u: DMatrix<f64>,
    /// One entry when θ is shared, otherwise one per observation.
    pub theta: Vec<DVector<f64>>,
    /// `(-ℓᵢ + λ‖θᵢ‖₁)/M` per observation.
    pub terms: Vec<f64>,
    pub group_term: f64,
}

/// `F = λ R_U(U) + Σᵢ (-ℓ(Xᵢ | U, θᵢ) + λ‖θᵢ‖₁) / M`.
pub fn corpus_objective(problem: &Problem, params: &ModelParams, pen: &PenaltyConfig) -> Result<f64> {
    problem.check_params(&params.u, &params.theta)?;
    Ok(evaluate(problem, &params.u, &params.theta, pen, false)?.value)
}

pub fn grad_objective(
    problem: &Problem,
    params: &ModelParams,
    pen: &PenaltyConfig,
) -> Result<ObjectiveGrad> {
    grad_objective_parts(problem, &params.u, &params.theta, pen)
}

/// [`grad_objective`] without bundling U and θ.
pub fn grad_objective_parts(
    problem: &Problem,
    u: &DMatrix<f64>,
    theta: &ThetaParams,
    pen: &PenaltyConfig,
) -> Result<ObjectiveGrad> {
    problem.check_params(u, theta)?;
    evaluate(problem, u, theta, pen, true)
}

struct ObsTerm {
    term: f64,
    grad_z: Option<DMatrix<f64>>,
    grad_theta: DVector<f64>,
    q: Option<DMatrix<f64>>,
}

fn evaluate(
    problem: &Problem,
    u: &DMatrix<f64>,
    theta: &ThetaParams,
    pen: &PenaltyConfig,
    want_grad: bool,
) -> Result<ObjectiveGrad> {
    let m = problem.len() as f64;
    let r = u.ncols();
    let norm = problem.normalizer(u)?;
    let shared_norm = match theta {
        ThetaParams::Shared(t) => Some(norm.eval(t)?),
        ThetaParams::PerObservation(_) => None,
    };
    let lambda = pen.weight;

    let per_obs: Vec<ObsTerm> = (0..problem.len())
        .into_par_iter()
        .map(|i| {
            let th = theta.get(i);
            let own;
            let ne: &NormalizerEval = match &shared_norm {
                Some(e) => e,
                None => {
                    own = norm.eval(th)?;
                    &own
                }
            };
            let obs = &problem.observations[i];
            let z = obs.project(u);
            let ce = core_eval(&problem.base_cores[i], &z, th, want_grad)?;
            let ll = obs.log_p.sum() + ce.log_det - ne.value;
            let term = (-ll + lambda * th.sum()) / m;
            let grad_theta = (&ne.grad_theta - &ce.grad_theta).add_scalar(lambda) / m;
            Ok(ObsTerm {
                term,
                grad_z: ce.grad_z,
                grad_theta,
                q: (want_grad && shared_norm.is_none()).then(|| ne.q.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (group_value, group_grad) = group_penalty(u, pen.smoothing);
    let group_term = lambda * group_value;
    let terms: Vec<f64> = per_obs.iter().map(|t| t.term).collect();
    let value = group_term + terms.iter().sum::<f64>();

    let mut grad_u = DMatrix::zeros(u.nrows(), r);
    let mut grad_theta = Vec::new();
    if want_grad {
        grad_u = group_grad * lambda;
        let mut q_sum = DMatrix::zeros(r, r);
        for (i, t) in per_obs.iter().enumerate() {
            if let Some(gz) = &t.grad_z {
                problem.observations[i].scatter(&(gz * (-1.0 / m)), &mut grad_u);
            }
            if let Some(q) = &t.q {
                q_sum += q;
            }
        }
        match &shared_norm {
            Some(e) => grad_u += norm.grad_u(e),
            None => {
                let avg = NormalizerEval { value: 0.0, q: q_sum / m, grad_theta: DVector::zeros(0) };
                grad_u += norm.grad_u(&avg);
            }
        }
        grad_theta = match theta {
            ThetaParams::Shared(_) => {
                let mut g = DVector::zeros(r);
                for t in &per_obs {
                    g += &t.grad_theta;
                }
                vec![g]
            }
            ThetaParams::PerObservation(_) => per_obs.into_iter().map(|t| t.grad_theta).collect(),
        };
    }
    Ok(ObjectiveGrad { value, u: grad_u, theta: grad_theta, terms, group_term })
}

/// Per-U precomputation for the θ blocks: with U fixed, each θᵢ only touches an r × r
/// normalizer and its own |X| × |X| core.
#[derive(Debug, Clone)]
pub struct ThetaContext {
    pub normalizer: Normalizer,
    pub z: Vec<DMatrix<f64>>,
    pub group_term: f64,
}

impl ThetaContext {
    pub fn new(problem: &Problem, u: &DMatrix<f64>, pen: &PenaltyConfig) -> Result<Self> {
        let normalizer = problem.normalizer(u)?;
        let z = problem.observations.par_iter().map(|o| o.project(u)).collect();
        let group_term = pen.weight * group_penalty(u, pen.smoothing).0;
        Ok(ThetaContext { normalizer, z, group_term })
    }

    /// `(-ℓᵢ + λ‖θ‖₁)/M` and its θ-gradient for observation i.
    pub fn term(
        &self,
        problem: &Problem,
        i: usize,
        theta: &DVector<f64>,
        pen: &PenaltyConfig,
    ) -> Result<(f64, DVector<f64>)> {
        let m = problem.len() as f64;
        let ne = self.normalizer.eval(theta)?;
        let ce = core_eval(&problem.base_cores[i], &self.z[i], theta, false)?;
        let ll = problem.observations[i].log_p.sum() + ce.log_det - ne.value;
        let term = (-ll + pen.weight * theta.sum()) / m;
        let grad = (&ne.grad_theta - &ce.grad_theta).add_scalar(pen.weight) / m;
        Ok((term, grad))
    }

    /// Shared-θ objective restricted to θ: `λR_U + Σᵢ termᵢ(θ)`.
    pub fn shared(
        &self,
        problem: &Problem,
        theta: &DVector<f64>,
        pen: &PenaltyConfig,
    ) -> Result<(f64, DVector<f64>)> {
        let m = problem.len() as f64;
        let ne = self.normalizer.eval(theta)?;
        let parts = (0..problem.len())
            .into_par_iter()
            .map(|i| {
                let ce = core_eval(&problem.base_cores[i], &self.z[i], theta, false)?;
                let ll = problem.observations[i].log_p.sum() + ce.log_det - ne.value;
                let term = (-ll + pen.weight * theta.sum()) / m;
                let grad = (&ne.grad_theta - &ce.grad_theta).add_scalar(pen.weight) / m;
                Ok((term, grad))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut value = self.group_term;
        let mut grad = DVector::zeros(theta.len());
        for (t, g) in parts {
            value += t;
            grad += g;
        }
        Ok((value, grad))
    }
}

/// One observation prepared for the diagonal-spectrum (stationary Fourier) model.
#[derive(Debug, Clone)]
pub struct SpectralObservation {
    /// |X| × V dense features
    pub phi: DMatrix<f64>,
    pub log_p_sum: f64,
}

impl SpectralObservation {
    pub fn new(ground: &GroundSet, x: &Observation) -> Result<Self> {
        let v = ground.dim();
        let mut phi = DMatrix::zeros(x.len(), v);
        let mut log_p_sum = 0.0;
        for (i, e) in x.elements().enumerate() {
            for (j, val) in ground.features(e)? {
                phi[(i, j)] = val;
            }
            log_p_sum += ground.log_p(e)?;
        }
        Ok(SpectralObservation { phi, log_p_sum })
    }

    /// log det(Φ_X Diag(a) Φ_Xᵀ) and optionally `diag(Φ_Xᵀ C⁻¹ Φ_X)`.
    pub fn log_det_core(&self, a: &DVector<f64>, want_grad: bool) -> Result<(f64, DVector<f64>)> {
        let v = a.len();
        if self.phi.nrows() == 0 {
            return Ok((0.0, DVector::zeros(v)));
        }
        let pa = crate::linalg::scale_columns(&self.phi.transpose(), &DVector::from_element(self.phi.nrows(), 1.0));
        let scaled = DMatrix::from_fn(self.phi.nrows(), v, |i, j| self.phi[(i, j)] * a[j]);
        let c = &scaled * &pa;
        let l = cholesky(&c).map_err(|pivot| Error::SingularObservation { pivot })?;
        let mut grad = DVector::zeros(v);
        if want_grad {
            let cinv = chol_inverse(&l);
            let w = &cinv * &self.phi;
            for j in 0..v {
                grad[j] = self.phi.column(j).dot(&w.column(j));
            }
        }
        Ok((chol_logdet(&l), grad))
    }
}

/// Corpus objective of a diagonal spectrum, `-(1/M) Σ ℓᵢ + λ‖a‖₁`, and its gradient in a.
pub fn spectral_objective(
    obs: &[SpectralObservation],
    a: &DVector<f64>,
    pen: &PenaltyConfig,
) -> Result<(f64, DVector<f64>)> {
    if obs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let m = obs.len() as f64;
    let parts = obs
        .par_iter()
        .map(|o| o.log_det_core(a, true).map(|(v, g)| (v + o.log_p_sum, g)))
        .collect::<Result<Vec<_>>>()?;
    let norm: f64 = a.iter().map(|v| v.ln_1p()).sum();
    let mut value = norm + pen.weight * a.sum();
    let mut grad = a.map(|v| 1.0 / (1.0 + v)).add_scalar(pen.weight);
    for (v, g) in parts {
        value -= v / m;
        grad -= g / m;
    }
    Ok((value, grad))
}
