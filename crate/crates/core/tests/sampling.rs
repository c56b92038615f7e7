mod common;

use std::collections::HashMap;

use common::*;
use nalgebra::DMatrix;
use subdpp::fourier::{synth_spectrum, FourierSpectrum};
use subdpp::kernel::k_from_l;
use subdpp::sampling::{
    build_dense, nearest_neighbor_distances, sample_dpp, sample_uniform_iid, DenseDPP, DEFAULT_CAP,
};
use subdpp::{LowRankL, Observation};

#[test]
fn dense_matrix_matches_oracle() {
    for l in [random_items(7, 3, 0.1, 0.2, 1), random_hypercube(5, 2, 0.3, 2), random_fourier(1, 2, 2, 0.0, 0.1, 3)] {
        let d = build_dense(&l, DEFAULT_CAP).unwrap();
        let (dense, _) = dense_l(&l);
        assert!((d.l() - &dense).abs().max() < 1e-12);
        let expect = marginal(&dense);
        assert!((d.marginal_kernel() - expect).abs().max() < 1e-10);
    }
}

#[test]
fn hypercube_trace_identity() {
    let l = random_hypercube(10, 3, 0.1, 7);
    let d = build_dense(&l, DEFAULT_CAP).unwrap();
    // tr L = Σₓ p(x) φ(x)ᵀAφ(x) = tr(AΣ) when α = 0
    let a = a_matrix(&l);
    let sigma = l.ground.second_moment().to_dense();
    let closed = (a * sigma).trace();
    assert!((d.l().trace() - closed).abs() < 1e-8);
    assert!((d.eigenvalues().sum() - closed).abs() < 1e-8);
}

#[test]
fn fourier_grid_kernel_is_circulant() {
    let c = 0.4;
    let spec = FourierSpectrum::new(1, 1, vec![1.0, c, c]).unwrap();
    let d = build_dense(&LowRankL::from_spectrum(&spec).unwrap(), DEFAULT_CAP).unwrap();
    let n = d.len();
    for i in 0..n {
        for j in 0..n {
            let shifted = d.l()[((i + 1) % n, (j + 1) % n)];
            assert!((d.l()[(i, j)] - shifted).abs() < 1e-12);
        }
    }
    let two = FourierSpectrum::new(2, 1, vec![1.0, c, c, c, c * c, c * c, c, c * c, c * c]).unwrap();
    let d = build_dense(&LowRankL::from_spectrum(&two).unwrap(), DEFAULT_CAP).unwrap();
    assert_eq!(d.len(), 9);
    let at = |a: usize, b: usize| d.l()[(a, b)];
    // shift both points by one grid step in each coordinate (index = 3·row + col)
    let shift = |k: usize| 3 * ((k / 3 + 1) % 3) + (k % 3 + 1) % 3;
    for i in 0..9 {
        for j in 0..9 {
            assert!((at(i, j) - at(shift(i), shift(j))).abs() < 1e-12);
        }
    }
}

#[test]
fn diagonal_kernel_inclusions_are_independent() {
    let d = DenseDPP::from_matrix(Observation::Items(vec![0, 1]), DMatrix::identity(2, 2)).unwrap();
    let mut g = rng(1);
    let draws = 100_000;
    let mut hits = [0usize; 2];
    for _ in 0..draws {
        for i in sample_dpp(&d, &mut g) {
            hits[i] += 1;
        }
    }
    let se = (0.25 / draws as f64).sqrt();
    for h in hits {
        assert!((h as f64 / draws as f64 - 0.5).abs() < 3.0 * se);
    }
}

#[test]
fn subset_frequencies_match_probabilities() {
    let l = random_items(4, 2, 0.3, 0.1, 5);
    let d = build_dense(&l, DEFAULT_CAP).unwrap();
    let (dense, _) = dense_l(&l);
    let norm = (&dense + DMatrix::identity(4, 4)).determinant();
    let draws = 1_000_000;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut g = rng(6);
    for _ in 0..draws {
        *counts.entry(sample_dpp(&d, &mut g)).or_default() += 1;
    }
    for mask in 0u32..16 {
        let idx: Vec<usize> = (0..4).filter(|&i| mask >> i & 1 == 1).collect();
        let p = det_principal(&dense, &idx) / norm;
        let f = *counts.get(&idx).unwrap_or(&0) as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((f - p).abs() <= 4.0 * se + 1e-12, "{idx:?}: {f} vs {p}");
    }
}

#[test]
fn sizes_bounded_by_rank() {
    let l = random_hypercube(4, 3, 0.0, 9);
    let d = build_dense(&l, DEFAULT_CAP).unwrap();
    assert!(d.eigenvalues().len() <= 3);
    let mut g = rng(10);
    for _ in 0..2000 {
        assert!(sample_dpp(&d, &mut g).len() <= 3);
    }
    let k = k_from_l(&l).unwrap();
    assert!(k.sigma == 0.0);
}

#[test]
fn uniform_mean() {
    let mut g = rng(11);
    let pts = sample_uniform_iid(100_000, 2, &mut g);
    let mean = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
    let se = (1.0 / 12.0 / pts.len() as f64).sqrt();
    assert!((mean - 0.5).abs() < 3.0 * se);
    assert!(pts.iter().flatten().all(|&x| (0.0..1.0).contains(&x)));
}

/// One-sided Mann–Whitney: z-score for "x tends to be smaller than y" (normal approximation
/// with midranks for ties).
fn mann_whitney_z(x: &[f64], y: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; all.len()];
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let r1: f64 = all.iter().zip(&ranks).filter(|(a, _)| a.1).map(|(_, r)| r).sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let sd = (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
    (mean - u1) / sd
}

#[test]
fn dpp_points_repel_compared_to_iid() {
    let base = synth_spectrum(15, 2.0).unwrap();
    let spec = FourierSpectrum::new(2, 7, base.a.iter().map(|a| 20.0 * a).collect()).unwrap();
    let d = build_dense(&LowRankL::from_spectrum(&spec).unwrap(), DEFAULT_CAP).unwrap();
    let Observation::Points(grid) = d.items().clone() else { unreachable!() };
    let mut g = rng(12);
    let (mut dpp_nn, mut iid_nn) = (Vec::new(), Vec::new());
    while dpp_nn.len() < 200 {
        let idx = sample_dpp(&d, &mut g);
        if idx.len() < 2 {
            continue;
        }
        let pts: Vec<Vec<f64>> = idx.iter().map(|&i| grid[i].clone()).collect();
        let iid = sample_uniform_iid(pts.len(), 2, &mut g);
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        dpp_nn.push(mean(nearest_neighbor_distances(&pts)));
        iid_nn.push(mean(nearest_neighbor_distances(&iid)));
    }
    let z = mann_whitney_z(&iid_nn, &dpp_nn);
    assert!(z > 2.326, "z = {z}");
}
