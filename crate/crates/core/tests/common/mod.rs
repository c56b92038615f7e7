//! Brute-force references shared by the integration tests. Everything here is computed
//! from the kernel definition on an explicitly enumerated ground set, without going
//! through the library's factored formulas.
#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use subdpp::{GroundSet, LowRankL, Observation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(v: usize, r: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(v, r, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

pub fn positive(r: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(r, |_, _| rng.random_range(lo..hi))
}

/// Explicit ground set: elements, their features and base probabilities.
pub struct Enumerated {
    pub items: Observation,
    /// N × V
    pub phi: DMatrix<f64>,
    pub p: DVector<f64>,
}

fn psi(j: usize, z: f64) -> f64 {
    if j == 0 {
        1.0
    } else {
        let k = j.div_ceil(2) as f64;
        if j % 2 == 1 {
            SQRT_2 * (2.0 * PI * k * z).cos()
        } else {
            SQRT_2 * (2.0 * PI * k * z).sin()
        }
    }
}

pub fn enumerate(ground: &GroundSet) -> Enumerated {
    match ground {
        GroundSet::Items { v } => Enumerated {
            items: Observation::Items((0..*v).collect()),
            phi: DMatrix::identity(*v, *v),
            p: DVector::from_element(*v, 1.0),
        },
        GroundSet::Hypercube { pi } => {
            let v = pi.len();
            let n = 1usize << v;
            let mut vectors = Vec::with_capacity(n);
            let mut phi = DMatrix::zeros(n, v);
            let mut p = DVector::zeros(n);
            for code in 0..n {
                let bits: Vec<u8> = (0..v).map(|i| ((code >> i) & 1) as u8).collect();
                let mut prob = 1.0;
                for i in 0..v {
                    phi[(code, i)] = bits[i] as f64;
                    prob *= if bits[i] == 1 { pi[i] } else { 1.0 - pi[i] };
                }
                p[code] = prob;
                vectors.push(bits);
            }
            Enumerated { items: Observation::Vectors(vectors), phi, p }
        }
        GroundSet::ContinuousFourier { m, d } => {
            let side = 2 * d + 1;
            let n = side.pow(*m as u32);
            let mut points = Vec::with_capacity(n);
            let mut phi = DMatrix::zeros(n, n);
            for code in 0..n {
                let digits = digits(code, side, *m);
                let x: Vec<f64> = digits.iter().map(|&g| g as f64 / side as f64).collect();
                for f in 0..n {
                    let fd = digits_of(f, side, *m);
                    phi[(code, f)] = fd.iter().zip(&x).map(|(&j, &z)| psi(j, z)).product();
                }
                points.push(x);
            }
            Enumerated { items: Observation::Points(points), phi, p: DVector::from_element(n, 1.0 / n as f64) }
        }
        GroundSet::Integers { .. } => panic!("integer lattice is not finite"),
    }
}

fn digits(code: usize, base: usize, m: usize) -> Vec<usize> {
    digits_of(code, base, m)
}

fn digits_of(mut code: usize, base: usize, m: usize) -> Vec<usize> {
    let mut out = vec![0; m];
    for slot in out.iter_mut().rev() {
        *slot = code % base;
        code /= base;
    }
    out
}

pub fn a_matrix(l: &LowRankL) -> DMatrix<f64> {
    let v = l.u.nrows();
    let mut a = DMatrix::identity(v, v) * l.gamma;
    for k in 0..l.u.ncols() {
        let c = l.u.column(k);
        a += c * c.transpose() * l.theta[k];
    }
    a
}

/// Dense N × N L matrix and the element order it uses.
pub fn dense_l(l: &LowRankL) -> (DMatrix<f64>, Observation) {
    let e = enumerate(&l.ground);
    let n = e.p.len();
    let s = e.p.map(f64::sqrt);
    let f = DMatrix::from_fn(n, e.phi.ncols(), |i, j| s[i] * e.phi[(i, j)]);
    let mut dense = &f * a_matrix(l) * f.transpose();
    for i in 0..n {
        dense[(i, i)] += l.alpha;
    }
    (dense, e.items)
}

pub fn logdet(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    let det = lu.determinant();
    det.abs().ln()
}

pub fn spd_logdet(m: &DMatrix<f64>) -> f64 {
    let c = m.clone().cholesky().expect("positive definite");
    2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn marginal(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let inv = (l + DMatrix::identity(n, n)).try_inverse().unwrap();
    l * inv
}

pub fn principal(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn det_principal(m: &DMatrix<f64>, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        1.0
    } else {
        principal(m, idx).determinant()
    }
}

/// Random model on each ground-set family used throughout the tests.
pub fn random_items(v: usize, r: usize, alpha: f64, gamma: f64, seed: u64) -> LowRankL {
    let mut g = rng(seed);
    let u = gaussian(v, r, 1.0 / (v as f64).sqrt(), &mut g);
    let theta = positive(r, 0.2, 2.0, &mut g);
    LowRankL::new(GroundSet::items(v).unwrap(), alpha, gamma, u, theta).unwrap()
}

pub fn random_hypercube(v: usize, r: usize, gamma: f64, seed: u64) -> LowRankL {
    let mut g = rng(seed);
    let pi: Vec<f64> = (0..v).map(|_| g.random_range(0.1..0.9)).collect();
    let u = gaussian(v, r, 1.0 / (v as f64).sqrt(), &mut g);
    let theta = positive(r, 0.2, 2.0, &mut g);
    LowRankL::new(GroundSet::hypercube(pi).unwrap(), 0.0, gamma, u, theta).unwrap()
}

pub fn random_fourier(m: usize, d: usize, r: usize, alpha: f64, gamma: f64, seed: u64) -> LowRankL {
    let mut g = rng(seed);
    let ground = GroundSet::continuous_fourier(m, d).unwrap();
    let v = ground.dim();
    let u = gaussian(v, r, 1.0 / (v as f64).sqrt(), &mut g);
    let theta = positive(r, 0.2, 2.0, &mut g);
    LowRankL::new(ground, alpha, gamma, u, theta).unwrap()
}

/// A random subset of the enumerated items of size `k`, as sorted indices.
pub fn random_subset(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Largest coordinate-wise relative error between the analytic gradient of the penalized
/// objective and central finite differences with step `h`. Relative errors use
/// `max(|analytic|, |numeric|, floor)` as denominator.
pub fn gradient_check(
    problem: &subdpp::Problem,
    params: &subdpp::ModelParams,
    pen: &subdpp::PenaltyConfig,
    h: f64,
    floor: f64,
) -> f64 {
    use subdpp::likelihood::{corpus_objective, grad_objective};
    use subdpp::{ModelParams, ThetaParams};
    let g = grad_objective(problem, params, pen).unwrap();
    let f = |p: &ModelParams| corpus_objective(problem, p, pen).unwrap();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let mut worst = 0.0f64;
    for idx in 0..params.u.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.u[idx] += h;
        minus.u[idx] -= h;
        let num = (f(&plus) - f(&minus)) / (2.0 * h);
        worst = worst.max(rel(g.u[idx], num));
    }
    let blocks = match &params.theta {
        ThetaParams::Shared(_) => 1,
        ThetaParams::PerObservation(ts) => ts.len(),
    };
    for b in 0..blocks {
        for k in 0..params.u.ncols() {
            let bump = |d: f64| {
                let mut p = params.clone();
                match &mut p.theta {
                    ThetaParams::Shared(t) => t[k] += d,
                    ThetaParams::PerObservation(ts) => ts[b][k] += d,
                }
                p
            };
            let num = (f(&bump(h)) - f(&bump(-h))) / (2.0 * h);
            worst = worst.max(rel(g.theta[b][k], num));
        }
    }
    worst
}

/// Small corpus drawn by index sampling from a model's enumerated ground set. Elements
/// with a zero feature vector are skipped since they lie outside the support when α = 0;
/// callers keep `max_size` within the model's rank when needed.
pub fn random_corpus(l: &LowRankL, m: usize, max_size: usize, seed: u64) -> Vec<Observation> {
    let e = enumerate(&l.ground);
    let usable: Vec<usize> = (0..e.p.len()).filter(|&i| e.phi.row(i).norm() > 0.0).collect();
    let mut g = rng(seed);
    (0..m)
        .map(|_| {
            let k = g.random_range(1..=max_size);
            let pick: Vec<usize> = random_subset(usable.len(), k, &mut g).iter().map(|&i| usable[i]).collect();
            e.items.select(&pick)
        })
        .collect()
}
