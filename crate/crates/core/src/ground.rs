//! Ground sets, their elements and feature maps, and the closed-form second moment
//! `Σ = Σₓ p(x) φ(x) φ(x)ᵀ = Diag(ν) + μμᵀ` that makes the kernel family tractable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier;

/// The universe of items a DPP is defined on.
///
/// Item indices are zero-based. For `ContinuousFourier` the base measure is the uniform
/// grid of side `2d+1` per dimension, so `N = V` and `p(x) = 1/V`; on that grid the
/// truncated Fourier basis is exactly orthonormal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundSet {
    Items { v: usize },
    Hypercube { pi: Vec<f64> },
    Integers { lambda: Vec<f64> },
    ContinuousFourier { m: usize, d: usize },
}

impl GroundSet {
    pub fn items(v: usize) -> Result<Self> {
        let g = GroundSet::Items { v };
        g.validate()?;
        Ok(g)
    }

    pub fn hypercube(pi: Vec<f64>) -> Result<Self> {
        let g = GroundSet::Hypercube { pi };
        g.validate()?;
        Ok(g)
    }

    pub fn integers(lambda: Vec<f64>) -> Result<Self> {
        let g = GroundSet::Integers { lambda };
        g.validate()?;
        Ok(g)
    }

    pub fn continuous_fourier(m: usize, d: usize) -> Result<Self> {
        let g = GroundSet::ContinuousFourier { m, d };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GroundSet::Items { v } if *v == 0 => {
                Err(Error::InvalidParameter("items ground set needs V >= 1".into()))
            }
            GroundSet::Hypercube { pi } => {
                if pi.is_empty() {
                    return Err(Error::InvalidParameter("hypercube needs V >= 1".into()));
                }
                if pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                    return Err(Error::InvalidParameter(
                        "Bernoulli parameters must lie strictly inside (0, 1)".into(),
                    ));
                }
                Ok(())
            }
            GroundSet::Integers { lambda } => {
                if lambda.is_empty() {
                    return Err(Error::InvalidParameter("integer lattice needs V >= 1".into()));
                }
                if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                    return Err(Error::InvalidParameter("Poisson rates must be positive".into()));
                }
                Ok(())
            }
            GroundSet::ContinuousFourier { m, .. } if *m == 0 => {
                Err(Error::InvalidParameter("Fourier ground set needs m >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Embedding dimension V.
    pub fn dim(&self) -> usize {
        match self {
            GroundSet::Items { v } => *v,
            GroundSet::Hypercube { pi } => pi.len(),
            GroundSet::Integers { lambda } => lambda.len(),
            GroundSet::ContinuousFourier { m, d } => (2 * d + 1).pow(*m as u32),
        }
    }

    /// Number of items N when it is finite and fits in a `usize`.
    pub fn finite_size(&self) -> Option<usize> {
        match self {
            GroundSet::Items { v } => Some(*v),
            GroundSet::ContinuousFourier { .. } => Some(self.dim()),
            GroundSet::Hypercube { pi } if pi.len() < usize::BITS as usize => Some(1 << pi.len()),
            _ => None,
        }
    }

    /// Whether a nonzero diagonal term α is admissible on this ground set.
    pub fn allows_alpha(&self) -> bool {
        matches!(self, GroundSet::Items { .. } | GroundSet::ContinuousFourier { .. })
    }

    /// Closed-form second moment of the embedding under p.
    pub fn second_moment(&self) -> SecondMoment {
        let v = self.dim();
        match self {
            GroundSet::Items { .. } | GroundSet::ContinuousFourier { .. } => SecondMoment {
                nu: DVector::from_element(v, 1.0),
                mu: DVector::zeros(v),
            },
            GroundSet::Hypercube { pi } => SecondMoment {
                nu: DVector::from_iterator(v, pi.iter().map(|p| p * (1.0 - p))),
                mu: DVector::from_column_slice(pi),
            },
            GroundSet::Integers { lambda } => SecondMoment {
                nu: DVector::from_column_slice(lambda),
                mu: DVector::from_column_slice(lambda),
            },
        }
    }

    /// Sparse feature row φ(x) as (index, value) pairs.
    pub fn features(&self, x: ElementRef<'_>) -> Result<Vec<(usize, f64)>> {
        let v = self.dim();
        match (self, x) {
            (GroundSet::Items { .. }, ElementRef::Item(i)) => {
                if i >= v {
                    return Err(Error::DimensionMismatch { expected: v, found: i + 1 });
                }
                Ok(vec![(i, 1.0)])
            }
            (GroundSet::Hypercube { .. }, ElementRef::Binary(bits)) => {
                check_len(v, bits.len())?;
                let mut row = Vec::new();
                for (i, &b) in bits.iter().enumerate() {
                    match b {
                        0 => {}
                        1 => row.push((i, 1.0)),
                        _ => return Err(Error::Parse(format!("non-binary entry {b}"))),
                    }
                }
                Ok(row)
            }
            (GroundSet::Integers { .. }, ElementRef::Counts(c)) => {
                check_len(v, c.len())?;
                Ok(c.iter()
                    .enumerate()
                    .filter(|(_, &n)| n > 0)
                    .map(|(i, &n)| (i, n as f64))
                    .collect())
            }
            (GroundSet::ContinuousFourier { m, d }, ElementRef::Point(p)) => {
                let phi = fourier::fourier_features(*m, *d, p)?;
                Ok(phi.iter().copied().enumerate().collect())
            }
            _ => Err(Error::InvalidParameter(
                "element kind does not match the ground set".into(),
            )),
        }
    }

    /// Dense embedding φ(x).
    pub fn embed(&self, x: ElementRef<'_>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        for (i, val) in self.features(x)? {
            out[i] = val;
        }
        Ok(out)
    }

    /// log p(x) of the fixed base distribution.
    pub fn log_p(&self, x: ElementRef<'_>) -> Result<f64> {
        match (self, x) {
            (GroundSet::Items { .. }, ElementRef::Item(_)) => Ok(0.0),
            (GroundSet::Hypercube { pi }, ElementRef::Binary(bits)) => {
                check_len(pi.len(), bits.len())?;
                Ok(pi
                    .iter()
                    .zip(bits)
                    .map(|(p, &b)| if b == 1 { p.ln() } else { (-p).ln_1p() })
                    .sum())
            }
            (GroundSet::Integers { lambda }, ElementRef::Counts(c)) => {
                check_len(lambda.len(), c.len())?;
                Ok(lambda
                    .iter()
                    .zip(c)
                    .map(|(l, &n)| -l + n as f64 * l.ln() - ln_factorial(n))
                    .sum())
            }
            (GroundSet::ContinuousFourier { .. }, ElementRef::Point(_)) => {
                Ok(-(self.dim() as f64).ln())
            }
            _ => Err(Error::InvalidParameter(
                "element kind does not match the ground set".into(),
            )),
        }
    }

    /// All items of a finite ground set, in a fixed order, as one observation.
    pub fn enumerate(&self, cap: usize) -> Result<Observation> {
        let too_large = |size: f64| Error::GroundSetTooLarge { size, cap };
        match self {
            GroundSet::Items { v } => {
                if *v > cap {
                    return Err(too_large(*v as f64));
                }
                Ok(Observation::Items((0..*v).collect()))
            }
            GroundSet::Hypercube { pi } => {
                let v = pi.len();
                let n = 2f64.powi(v as i32);
                if n > cap as f64 {
                    return Err(too_large(n));
                }
                let vectors = (0..(1usize << v))
                    .map(|code| (0..v).map(|i| ((code >> i) & 1) as u8).collect())
                    .collect();
                Ok(Observation::Vectors(vectors))
            }
            GroundSet::Integers { .. } => Err(too_large(f64::INFINITY)),
            GroundSet::ContinuousFourier { m, d } => {
                let n = self.dim();
                if n > cap {
                    return Err(too_large(n as f64));
                }
                Ok(Observation::Points(fourier::grid_points(*m, 2 * d + 1)))
            }
        }
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `Σ = Diag(ν) + μμᵀ`, kept factored; products with Σ are a diagonal scale plus a
/// rank-one update.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoment {
    pub nu: DVector<f64>,
    pub mu: DVector<f64>,
}

impl SecondMoment {
    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    /// Σ X
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.nu[i];
        }
        let mtx = self.mu.transpose() * x;
        out += &self.mu * mtx;
        out
    }

    /// (I + cΣ)⁻¹ X by Sherman–Morrison.
    pub fn solve_shifted(&self, c: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
        let e: DVector<f64> = self.nu.map(|n| 1.0 + c * n);
        let mut y = x.clone();
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row /= e[i];
        }
        let w = self.mu.component_div(&e);
        let denom = 1.0 + c * self.mu.dot(&w);
        let coef = (self.mu.transpose() * &y) * (c / denom);
        y -= w * coef;
        y
    }

    /// log det(I + cΣ)
    pub fn log_det_shifted(&self, c: f64) -> f64 {
        let mut acc = 0.0;
        let mut quad = 0.0;
        for i in 0..self.dim() {
            let e = 1.0 + c * self.nu[i];
            acc += e.ln();
            quad += self.mu[i] * self.mu[i] / e;
        }
        acc + (c * quad).ln_1p()
    }

    /// Rᵀ B R for a factor R with R Rᵀ = Σ, so the result shares its spectrum with
    /// Σ^{1/2} B Σ^{1/2}. R = Diag(ν)^{1/2} (I + c wwᵀ) with w = Diag(ν)^{-1/2} μ.
    pub fn congruence(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let v = self.dim();
        let sq: DVector<f64> = self.nu.map(f64::sqrt);
        let w = self.mu.component_div(&sq);
        let s = w.norm_squared();
        let c = if s > 0.0 { ((1.0 + s).sqrt() - 1.0) / s } else { 0.0 };
        // R X = Diag(sq) (X + c w (wᵀX))
        let apply_r = |x: &DMatrix<f64>| {
            let mut y = x + (&w * (w.transpose() * x)) * c;
            for (i, mut row) in y.row_iter_mut().enumerate() {
                row *= sq[i];
            }
            y
        };
        // Rᵀ X = (I + c wwᵀ) Diag(sq) X
        let apply_rt = |x: &DMatrix<f64>| {
            let mut y = x.clone();
            for (i, mut row) in y.row_iter_mut().enumerate() {
                row *= sq[i];
            }
            let wy = w.transpose() * &y;
            y + &w * wy * c
        };
        let br = b * apply_r(&DMatrix::identity(v, v));
        let mut out = apply_rt(&br);
        crate::linalg::symmetrize(&mut out);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.nu) + &self.mu * self.mu.transpose()
    }
}

/// A borrowed element of some ground set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementRef<'a> {
    Item(usize),
    Binary(&'a [u8]),
    Counts(&'a [u64]),
    Point(&'a [f64]),
}

/// One observed subset, in the corpus JSONL schema:
/// `{"items":[..]}`, `{"vectors":[[0,1,..],..]}`, `{"counts":[[..],..]}` or
/// `{"points":[[..],..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observation {
    Items(Vec<usize>),
    Vectors(Vec<Vec<u8>>),
    Counts(Vec<Vec<u64>>),
    Points(Vec<Vec<f64>>),
}

impl Observation {
    pub fn len(&self) -> usize {
        match self {
            Observation::Items(v) => v.len(),
            Observation::Vectors(v) => v.len(),
            Observation::Counts(v) => v.len(),
            Observation::Points(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn element(&self, i: usize) -> ElementRef<'_> {
        match self {
            Observation::Items(v) => ElementRef::Item(v[i]),
            Observation::Vectors(v) => ElementRef::Binary(&v[i]),
            Observation::Counts(v) => ElementRef::Counts(&v[i]),
            Observation::Points(v) => ElementRef::Point(&v[i]),
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = ElementRef<'_>> {
        (0..self.len()).map(move |i| self.element(i))
    }

    /// The sub-observation made of the given positions.
    pub fn select(&self, idx: &[usize]) -> Observation {
        match self {
            Observation::Items(v) => Observation::Items(idx.iter().map(|&i| v[i]).collect()),
            Observation::Vectors(v) => {
                Observation::Vectors(idx.iter().map(|&i| v[i].clone()).collect())
            }
            Observation::Counts(v) => {
                Observation::Counts(idx.iter().map(|&i| v[i].clone()).collect())
            }
            Observation::Points(v) => {
                Observation::Points(idx.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }

    /// Checks element kinds and dimensions against the ground set and that elements are
    /// pairwise distinct.
    pub fn validate(&self, ground: &GroundSet) -> Result<()> {
        for e in self.elements() {
            ground.features(e)?;
        }
        let distinct = match self {
            Observation::Items(v) => all_distinct(v.iter().map(|i| vec![*i as u64])),
            Observation::Vectors(v) => {
                all_distinct(v.iter().map(|x| x.iter().map(|&b| b as u64).collect()))
            }
            Observation::Counts(v) => all_distinct(v.iter().cloned()),
            Observation::Points(v) => {
                all_distinct(v.iter().map(|x| x.iter().map(|f| f.to_bits()).collect()))
            }
        };
        if !distinct {
            return Err(Error::InvalidParameter("observation has repeated elements".into()));
        }
        Ok(())
    }
}

fn all_distinct(keys: impl Iterator<Item = Vec<u64>>) -> bool {
    let mut seen = std::collections::HashSet::new();
    keys.into_iter().all(|k| seen.insert(k))
}
