//! The low-rank K/L kernel family.
//!
//! `L(x,y) = α·1{x=y} + p(x)^{1/2} φ(x)ᵀ A φ(y) p(y)^{1/2}` with `A = γI + U Diag(θ) Uᵀ`,
//! and the matching marginal kernel `K(x,y) = σ·1{x=y} + p(x)^{1/2} φ(x)ᵀ B φ(y) p(y)^{1/2}`.
//! Everything here costs a polynomial in V and r; N never appears except through the
//! `N log(α+1)` and `σN` terms, which vanish when α = 0.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ground::{ElementRef, GroundSet, SecondMoment};
use crate::linalg::{self, chol_logdet, cholesky, symmetrize};

/// Relative tolerance used by [`check_validity`] unless overridden.
pub const DEFAULT_VALIDITY_TOL: f64 = 1e-10;

/// L-representation `(α, γ, U, θ)` on a ground set.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankL {
    pub alpha: f64,
    pub gamma: f64,
    /// V × r embedding.
    pub u: DMatrix<f64>,
    pub theta: DVector<f64>,
    pub ground: GroundSet,
}

impl LowRankL {
    pub fn new(
        ground: GroundSet,
        alpha: f64,
        gamma: f64,
        u: DMatrix<f64>,
        theta: DVector<f64>,
    ) -> Result<Self> {
        let l = LowRankL { alpha, gamma, u, theta, ground };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        self.ground.validate()?;
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter("alpha must be nonnegative".into()));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter("gamma must be nonnegative".into()));
        }
        if self.alpha > 0.0 && !self.ground.allows_alpha() {
            return Err(Error::InvalidParameter(
                "alpha must be zero on hypercube and integer ground sets".into(),
            ));
        }
        if self.u.nrows() != self.ground.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ground.dim(),
                found: self.u.nrows(),
            });
        }
        if self.theta.len() != self.u.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.u.ncols(),
                found: self.theta.len(),
            });
        }
        if self.theta.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidParameter("theta must be nonnegative".into()));
        }
        if self.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("U has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// ρ = 1/(α+1)
    pub fn rho(&self) -> f64 {
        1.0 / (self.alpha + 1.0)
    }

    pub fn a_dense(&self) -> DMatrix<f64> {
        let v = self.dim();
        let ut = linalg::scale_columns(&self.u, &self.theta);
        DMatrix::identity(v, v) * self.gamma + ut * self.u.transpose()
    }

    pub fn with_theta(&self, theta: DVector<f64>) -> Self {
        LowRankL { theta, ..self.clone() }
    }

    /// Re-factors a dense PSD `A` as `U Diag(θ) Uᵀ` (γ = 0), keeping eigenvalues above
    /// `tol · max eigenvalue`.
    pub fn from_dense(ground: GroundSet, alpha: f64, a: &DMatrix<f64>, tol: f64) -> Result<Self> {
        let v = ground.dim();
        if a.nrows() != v || a.ncols() != v {
            return Err(Error::DimensionMismatch { expected: v, found: a.nrows() });
        }
        let mut sym = a.clone();
        symmetrize(&mut sym);
        let eig = sym.symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0_f64, |m, &x| m.max(x));
        let keep: Vec<usize> = (0..v).filter(|&i| eig.eigenvalues[i] > tol * top).collect();
        let u = DMatrix::from_fn(v, keep.len(), |i, k| eig.eigenvectors[(i, keep[k])]);
        let theta = DVector::from_iterator(keep.len(), keep.iter().map(|&k| eig.eigenvalues[k]));
        LowRankL::new(ground, alpha, 0.0, u, theta)
    }

    /// The diagonal Fourier model `A = Diag(a)` as `U = I`, `θ = a`, `γ = 0`.
    pub fn from_spectrum(spec: &crate::fourier::FourierSpectrum) -> Result<Self> {
        spec.validate()?;
        let v = spec.dim();
        LowRankL::new(
            GroundSet::continuous_fourier(spec.m, spec.d)?,
            0.0,
            0.0,
            DMatrix::identity(v, v),
            DVector::from_column_slice(&spec.a),
        )
    }

    /// L(x, y) evaluated directly.
    pub fn entry(&self, x: ElementRef<'_>, y: ElementRef<'_>) -> Result<f64> {
        let fx = self.ground.embed(x)?;
        let fy = self.ground.embed(y)?;
        let scale = (0.5 * (self.ground.log_p(x)? + self.ground.log_p(y)?)).exp();
        let ux = self.u.transpose() * &fx;
        let uy = self.u.transpose() * &fy;
        let low: f64 = (0..self.rank()).map(|k| self.theta[k] * ux[k] * uy[k]).sum();
        let diag = if x == y { self.alpha } else { 0.0 };
        Ok(diag + scale * (self.gamma * fx.dot(&fy) + low))
    }
}

/// K-representation `(σ, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankK {
    pub sigma: f64,
    pub b: DMatrix<f64>,
    pub ground: GroundSet,
}

impl LowRankK {
    /// K(x, y) evaluated directly.
    pub fn entry(&self, x: ElementRef<'_>, y: ElementRef<'_>) -> Result<f64> {
        let fx = self.ground.embed(x)?;
        let fy = self.ground.embed(y)?;
        let scale = (0.5 * (self.ground.log_p(x)? + self.ground.log_p(y)?)).exp();
        let diag = if x == y { self.sigma } else { 0.0 };
        Ok(diag + scale * (fx.transpose() * &self.b * fy)[0])
    }
}

/// Dense L-side parameters produced by [`l_from_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseL {
    pub alpha: f64,
    pub a: DMatrix<f64>,
}

/// `σ = α/(α+1)`, `B = ρ² (A⁻¹ + ρΣ)⁻¹` computed without inverting A as
/// `B = ρ² (I + ρAΣ)⁻¹ A`.
pub fn k_from_l(l: &LowRankL) -> Result<LowRankK> {
    let rho = l.rho();
    let sigma_m = l.ground.second_moment();
    let a = l.a_dense();
    let v = l.dim();
    // AΣ = (ΣA)ᵀ since both are symmetric.
    let a_sigma = sigma_m.apply(&a).transpose();
    let m = DMatrix::identity(v, v) + a_sigma * rho;
    let mut b = m
        .lu()
        .solve(&a)
        .ok_or(Error::SingularMatrix("I + ρAΣ"))?;
    b *= rho * rho;
    symmetrize(&mut b);
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularMatrix("I + ρAΣ"));
    }
    Ok(LowRankK { sigma: l.alpha / (l.alpha + 1.0), b, ground: l.ground.clone() })
}

/// `α = σ/(1-σ)`, `A = τ² (B⁻¹ - τΣ)⁻¹ = τ² (I - τBΣ)⁻¹ B` with `τ = 1/(1-σ)`.
pub fn l_from_k(k: &LowRankK) -> Result<DenseL> {
    if !(k.sigma >= 0.0 && k.sigma < 1.0) {
        return Err(Error::InvalidParameter("sigma must lie in [0, 1)".into()));
    }
    let tau = 1.0 / (1.0 - k.sigma);
    let sigma_m = k.ground.second_moment();
    let v = k.b.nrows();
    let gap = DMatrix::identity(v, v) - sigma_m.congruence(&k.b) * tau;
    if cholesky(&gap).is_err() {
        return Err(Error::NotStrictlyValid);
    }
    let b_sigma = sigma_m.apply(&k.b).transpose();
    let m = DMatrix::identity(v, v) - b_sigma * tau;
    let mut a = m.lu().solve(&k.b).ok_or(Error::NotStrictlyValid)?;
    a *= tau * tau;
    symmetrize(&mut a);
    Ok(DenseL { alpha: k.sigma / (1.0 - k.sigma), a })
}

/// Outcome of the validity conditions on a marginal kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub sigma_in_unit_interval: bool,
    pub b_psd: bool,
    pub below_bound: bool,
    pub min_eig_b: f64,
    /// Smallest eigenvalue of `(1-σ)I - Σ^{1/2} B Σ^{1/2}`.
    pub min_eig_gap: f64,
    pub tolerance: f64,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.sigma_in_unit_interval && self.b_psd && self.below_bound
    }
}

/// Checks `σ ∈ [0,1]` and `0 ⪯ B ⪯ (1-σ)Σ⁻¹` up to `tol_factor · (1 + ‖B‖)`.
pub fn check_validity(k: &LowRankK, tol_factor: f64) -> ValidityReport {
    let tolerance = tol_factor * (1.0 + linalg::sym_norm(&k.b));
    let min_eig_b = linalg::min_eigenvalue(&k.b);
    let v = k.b.nrows();
    let sigma_m = k.ground.second_moment();
    let gap = DMatrix::identity(v, v) * (1.0 - k.sigma) - sigma_m.congruence(&k.b);
    let min_eig_gap = linalg::min_eigenvalue(&gap);
    ValidityReport {
        sigma_in_unit_interval: (0.0..=1.0).contains(&k.sigma),
        b_psd: min_eig_b >= -tolerance,
        below_bound: min_eig_gap >= -tolerance,
        min_eig_b,
        min_eig_gap,
        tolerance,
    }
}

/// The `N log(α+1)` term; zero whenever α = 0 so infinite ground sets never enter.
fn diagonal_term(l: &LowRankL) -> Result<f64> {
    if l.alpha == 0.0 {
        return Ok(0.0);
    }
    let n = l
        .ground
        .finite_size()
        .ok_or_else(|| Error::InvalidParameter("alpha > 0 needs a finite ground set".into()))?;
    Ok(n as f64 * l.alpha.ln_1p())
}

/// log det(L + I).
///
/// Uses the Woodbury chain through `A⁻¹` when A is invertible and falls back to the
/// determinant-lemma form (which never inverts A) when γ = 0 or some θₖ = 0.
pub fn log_det_l_plus_i(l: &LowRankL) -> Result<f64> {
    let invertible = l.gamma > 0.0 && l.theta.iter().all(|&t| t > 0.0);
    if invertible {
        log_det_woodbury_chain(l)
    } else {
        log_det_determinant_lemma(l)
    }
}

/// log det(L+I) as `N log(α+1) + log det A + log det(A⁻¹ + ρΣ)`, with the determinant
/// lemma on μμᵀ, Woodbury on `Diag(1/ν)` and on `A⁻¹`, and only r × r factorizations.
pub fn log_det_woodbury_chain(l: &LowRankL) -> Result<f64> {
    if !(l.gamma > 0.0) {
        return Err(Error::DegenerateParameter("gamma = 0 makes A singular"));
    }
    if l.theta.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::DegenerateParameter("a zero theta makes the Woodbury chain undefined"));
    }
    let sm = l.ground.second_moment();
    if sm.nu.iter().any(|&n| !(n > 0.0)) {
        return Err(Error::DegenerateParameter("second moment has a zero diagonal"));
    }
    let (v, r) = (l.dim(), l.rank());
    let (rho, gamma) = (l.rho(), l.gamma);
    let u = &l.u;
    let utu = u.transpose() * u;

    // log det A = log det(Diag(1/θ) + UᵀU/γ) + Σ log θ + V log γ
    let mut m1 = &utu / gamma;
    for k in 0..r {
        m1[(k, k)] += 1.0 / l.theta[k];
    }
    let log_det_a = spd(&m1, "Diag(1/θ) + UᵀU/γ")?
        + l.theta.iter().map(|t| t.ln()).sum::<f64>()
        + v as f64 * gamma.ln();

    // log det(A⁻¹ + ρ Diag(ν))
    let h: DVector<f64> = sm.nu.map(|n| n / (1.0 + n * rho * gamma));
    let w: DVector<f64> = sm.nu.map(|n| n * gamma * rho / (1.0 + n * gamma * rho));
    let mut m2 = u.transpose() * DMatrix::from_diagonal(&w) * u;
    let mut m3 = utu.clone();
    for k in 0..r {
        m2[(k, k)] += gamma / l.theta[k];
        m3[(k, k)] += gamma / l.theta[k];
    }
    let log_det_inner = spd(&m2, "Diag(γ/θ) + Uᵀ Diag(νγρ/(1+νγρ)) U")?
        - spd(&m3, "Diag(γ/θ) + UᵀU")?
        + sm.nu.iter().map(|n| (1.0 / gamma + rho * n).ln()).sum::<f64>();

    // log[1 + μᵀ(Diag(1/ν) - Diag(1/ν)(ρA + Diag(1/ν))⁻¹Diag(1/ν))μ], with
    // (ρA + Diag(1/ν))⁻¹ = H - HU(Diag(1/ρθ) + UᵀHU)⁻¹UᵀH.
    let m_over_nu = sm.mu.component_div(&sm.nu);
    let base: f64 = (0..v)
        .map(|i| sm.mu[i] * sm.mu[i] * rho * gamma / (1.0 + sm.nu[i] * rho * gamma))
        .sum();
    let hm = h.component_mul(&m_over_nu);
    let uthm = u.transpose() * &hm;
    let mut m4 = u.transpose() * DMatrix::from_diagonal(&h) * u;
    for k in 0..r {
        m4[(k, k)] += 1.0 / (rho * l.theta[k]);
    }
    let corr = if r > 0 && uthm.norm() > 0.0 {
        let l4 = cholesky(&m4).map_err(|_| Error::SingularMatrix("Diag(1/ρθ) + UᵀHU"))?;
        let sol = linalg::chol_solve(&l4, &DMatrix::from_column_slice(r, 1, uthm.as_slice()));
        uthm.dot(&sol.column(0))
    } else {
        0.0
    };
    let log_rank_one = (base + corr).ln_1p();

    Ok(diagonal_term(l)? + log_det_a + log_det_inner + log_rank_one)
}

/// log det(L+I) as `N log(α+1) + log det(I + ργΣ) + log det(I_r + ρ Θ^{1/2} UᵀGU Θ^{1/2})`
/// with `G = Σ(I + ργΣ)⁻¹`; valid for any γ ≥ 0, θ ≥ 0.
pub fn log_det_determinant_lemma(l: &LowRankL) -> Result<f64> {
    let norm = Normalizer::new(l)?;
    norm.log_det(&l.theta)
}

fn spd(m: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    cholesky(m)
        .map(|c| chol_logdet(&c))
        .map_err(|_| Error::SingularMatrix(what))
}

/// Per-U cache for `log det(L+I)` as a function of θ, and its gradients.
#[derive(Debug, Clone)]
pub struct Normalizer {
    pub rho: f64,
    /// `N log(α+1) + log det(I + ργΣ)`
    pub base: f64,
    /// `G U`, V × r
    pub gu: DMatrix<f64>,
    /// `Uᵀ G U`, r × r
    pub s: DMatrix<f64>,
}

/// Value and θ-dependent pieces of the normalizer gradient.
#[derive(Debug, Clone)]
pub struct NormalizerEval {
    pub value: f64,
    /// `Θ^{1/2} M⁻¹ Θ^{1/2}`; the U-gradient is `2ρ (GU) Q`.
    pub q: DMatrix<f64>,
    pub grad_theta: DVector<f64>,
}

impl Normalizer {
    pub fn new(l: &LowRankL) -> Result<Self> {
        Self::from_parts(&l.ground.second_moment(), l.rho(), l.gamma, &l.u, diagonal_term(l)?)
    }

    pub fn from_parts(
        sm: &SecondMoment,
        rho: f64,
        gamma: f64,
        u: &DMatrix<f64>,
        diagonal_term: f64,
    ) -> Result<Self> {
        let c = rho * gamma;
        let y = sm.solve_shifted(c, u);
        let gu = sm.apply(&y);
        let mut s = u.transpose() * &gu;
        symmetrize(&mut s);
        Ok(Normalizer { rho, base: diagonal_term + sm.log_det_shifted(c), gu, s })
    }

    fn factor(&self, theta: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let r = theta.len();
        let sq = theta.map(f64::sqrt);
        let mut m = DMatrix::from_fn(r, r, |i, j| self.rho * sq[i] * self.s[(i, j)] * sq[j]);
        for k in 0..r {
            m[(k, k)] += 1.0;
        }
        let l = cholesky(&m).map_err(|_| Error::SingularMatrix("I + ρΘ^{1/2}SΘ^{1/2}"))?;
        Ok((l, sq))
    }

    pub fn log_det(&self, theta: &DVector<f64>) -> Result<f64> {
        let (l, _) = self.factor(theta)?;
        Ok(self.base + chol_logdet(&l))
    }

    pub fn eval(&self, theta: &DVector<f64>) -> Result<NormalizerEval> {
        let (l, sq) = self.factor(theta)?;
        let r = theta.len();
        let minv = linalg::chol_inverse(&l);
        let q = DMatrix::from_fn(r, r, |i, j| sq[i] * minv[(i, j)] * sq[j]);
        // ∂/∂θₖ log det(I + ρΘS) = ρ (S - ρ S Q S)ₖₖ
        let sqs = &self.s * &q * &self.s;
        let grad_theta =
            DVector::from_fn(r, |k, _| self.rho * (self.s[(k, k)] - self.rho * sqs[(k, k)]));
        Ok(NormalizerEval { value: self.base + chol_logdet(&l), q, grad_theta })
    }

    /// ∂ log det(L+I) / ∂U for a given evaluation.
    pub fn grad_u(&self, e: &NormalizerEval) -> DMatrix<f64> {
        &self.gu * &e.q * (2.0 * self.rho)
    }
}

/// E|X| = tr K = σN + tr(BΣ).
pub fn expected_cardinality(l: &LowRankL) -> Result<f64> {
    let k = k_from_l(l)?;
    let sm = l.ground.second_moment();
    let trace_b_sigma: f64 = (0..l.dim()).map(|i| sm.nu[i] * k.b[(i, i)]).sum::<f64>()
        + (sm.mu.transpose() * &k.b * &sm.mu)[0];
    let diag = if l.alpha > 0.0 {
        let n = l.ground.finite_size().ok_or_else(|| {
            Error::InvalidParameter("alpha > 0 needs a finite ground set".into())
        })?;
        k.sigma * n as f64
    } else {
        0.0
    };
    Ok(diag + trace_b_sigma)
}

/// P({x, y} ⊆ X) = K(x,x) K(y,y) - K(x,y)².
pub fn pair_inclusion_prob(k: &LowRankK, x: ElementRef<'_>, y: ElementRef<'_>) -> Result<f64> {
    if x == y {
        return Err(Error::InvalidParameter("pair inclusion needs two distinct items".into()));
    }
    let kxx = k.entry(x, x)?;
    let kyy = k.entry(y, y)?;
    let kxy = k.entry(x, y)?;
    Ok(kxx * kyy - kxy * kxy)
}
