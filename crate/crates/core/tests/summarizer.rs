mod common;

use std::collections::HashSet;

use common::*;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use subdpp::io::{read_jsonl, write_jsonl};
use subdpp::summarize::{
    build_vocab, default_stopwords, greedy_map, greedy_map_scaled, sentence_embed, summarize_document,
    word_cosine_neighbors, Document, ThetaFit,
};
use subdpp::likelihood::l_submatrix;
use subdpp::{Error, GroundSet, LowRankL, Observation, OptimizerConfig, PenaltyConfig};

fn log_det_sub(m: &DMatrix<f64>, idx: &[usize]) -> f64 {
    let d = det_principal(m, idx);
    if d > 0.0 { d.ln() } else { f64::NEG_INFINITY }
}

fn exhaustive(m: &DMatrix<f64>, l: usize) -> (Vec<usize>, f64) {
    let n = m.nrows();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != l {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let v = log_det_sub(m, &idx);
        if v > best.1 {
            best = (idx, v);
        }
    }
    best
}

fn random_psd(n: usize, g: &mut rand_chacha::ChaCha8Rng) -> DMatrix<f64> {
    let k = g.random_range(n..2 * n + 1);
    let b = gaussian(n, k, 1.0 / (k as f64).sqrt(), g);
    &b * b.transpose()
}

#[test]
fn greedy_usually_matches_exhaustive() {
    let mut g = rng(1);
    let (mut agree, mut worst_ratio) = (0, f64::INFINITY);
    let trials = 500;
    for _ in 0..trials {
        let n = g.random_range(2..=12);
        let l = g.random_range(1..=n);
        let m = random_psd(n, &mut g);
        let res = greedy_map(&m, l).unwrap();
        let mut sel = res.selected.clone();
        sel.sort_unstable();
        let got = log_det_sub(&m, &sel);
        assert!(got.is_finite(), "rank-deficient selection");
        let (best, opt) = exhaustive(&m, l);
        assert!((res.gains.iter().sum::<f64>() - got).abs() < 1e-8);
        if sel == best {
            agree += 1;
        }
        worst_ratio = worst_ratio.min(got.exp() / opt.exp());
    }
    assert!(agree as f64 >= 0.9 * trials as f64, "{agree}/{trials}");
    assert!(worst_ratio > 0.0);
}

#[test]
fn greedy_is_permutation_covariant() {
    let mut g = rng(2);
    for _ in 0..100 {
        let n = g.random_range(3..=10);
        let m = random_psd(n, &mut g);
        let l = g.random_range(1..=n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut g);
        let pm = DMatrix::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
        let mut a: Vec<usize> = greedy_map(&m, l).unwrap().selected;
        let mut b: Vec<usize> = greedy_map(&pm, l).unwrap().selected.iter().map(|&i| perm[i]).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }
}

#[test]
fn scaled_greedy_matches_dense_greedy() {
    let l = random_hypercube(8, 4, 0.2, 3);
    let (dense, items) = dense_l(&l);
    let mut g = rng(4);
    for _ in 0..20 {
        let idx = random_subset(dense.nrows(), 6, &mut g);
        let sub = l_submatrix(&l, &items.select(&idx)).unwrap();
        let a = greedy_map_scaled(&sub.core, &sub.log_p, 3).unwrap();
        let b = greedy_map(&principal(&dense, &idx), 3).unwrap();
        assert_eq!(a.selected, b.selected);
    }
}

#[test]
fn greedy_beats_random_subsets() {
    let l = random_hypercube(12, 5, 1.0 / 12.0, 5);
    let mut g = rng(6);
    let mut wins = 0;
    for _ in 0..1000 {
        let sentences: Vec<Vec<u8>> =
            (0..8).map(|_| (0..12).map(|_| u8::from(g.random_bool(0.3))).collect()).collect();
        let sub = l_submatrix(&l, &Observation::Vectors(sentences)).unwrap();
        let dense = sub.to_dense();
        let Ok(res) = greedy_map(&dense, 3) else { continue };
        let mut sel = res.selected;
        sel.sort_unstable();
        let rand_idx = random_subset(8, 3, &mut g);
        if log_det_sub(&dense, &sel) >= log_det_sub(&dense, &rand_idx) {
            wins += 1;
        }
    }
    assert!(wins >= 950, "{wins}");
}

const DOCS: [&str; 3] = [
    "The river flooded the valley. Farmers moved cattle to the hills! Rain kept falling on the valley.",
    "Markets rallied after the report. Investors bought shares in the river transport firms. The report surprised analysts.",
    "Cattle prices rose in the valley markets. Analysts expect more rain? Farmers and investors watch the river.",
];

#[test]
fn vocabulary_is_order_independent() {
    let stop = default_stopwords();
    let a = build_vocab(&DOCS, 12, &stop).unwrap();
    let mut shuffled = DOCS.to_vec();
    shuffled.reverse();
    let b = build_vocab(&shuffled, 12, &stop).unwrap();
    assert_eq!(a, b);
    assert!(a.get("the").is_none());
    assert_eq!(a.words[..2], ["river", "valley"]);
    let all = build_vocab(&DOCS, 10_000, &stop).unwrap();
    let distinct: HashSet<String> = DOCS
        .iter()
        .flat_map(|d| subdpp::summarize::tokenize(d))
        .filter(|t| !stop.contains(t))
        .collect();
    assert_eq!(all.len(), distinct.len());
}

#[test]
fn documents_round_trip_through_jsonl() {
    let vocab = build_vocab(&DOCS, 20, &default_stopwords()).unwrap();
    let docs: Vec<Document> = DOCS.iter().map(|d| sentence_embed(d, &vocab)).collect();
    assert!(docs.iter().all(|d| d.len() == 3));
    let mut buf = Vec::new();
    write_jsonl(&mut buf, None, &docs).unwrap();
    let (back, _): (Vec<Document>, _) = read_jsonl(&buf[..]).unwrap();
    assert_eq!(back, docs);
}

fn text_model(vocab_len: usize, seed: u64) -> LowRankL {
    let mut g = rng(seed);
    let u = gaussian(vocab_len, 3, 1.0, &mut g);
    let pi = vec![0.2; vocab_len];
    LowRankL::new(GroundSet::hypercube(pi).unwrap(), 0.0, 0.5, u, positive(3, 0.5, 1.5, &mut g)).unwrap()
}

#[test]
fn summarize_examples() {
    let vocab = build_vocab(&DOCS, 20, &default_stopwords()).unwrap();
    let model = text_model(vocab.len(), 7);
    let one = summarize_document("a", "Farmers watch the river.", &model, &vocab, 1, None).unwrap();
    assert_eq!(one.selected, vec![0]);
    assert_eq!(one.text, vec!["Farmers watch the river."]);

    let err = summarize_document("b", DOCS[0], &model, &vocab, 5, None).unwrap_err();
    assert_eq!(err, Error::InfeasibleSize { requested: 5, available: 3 });

    let dup = "Farmers watch the river. Farmers watch the river. Markets rallied.";
    let s = summarize_document("c", dup, &model, &vocab, 2, None).unwrap();
    let mut sel = s.selected.clone();
    sel.sort_unstable();
    assert!(sel.contains(&2));

    let pen = PenaltyConfig::default();
    let cfg = OptimizerConfig { inner_iters: 20, ..Default::default() };
    let fitted = summarize_document("d", DOCS[1], &model, &vocab, 2, Some(ThetaFit { pen: &pen, cfg: &cfg })).unwrap();
    assert_eq!(fitted.selected.len(), 2);
    assert_eq!(fitted.gains.len(), 2);
}

#[test]
fn neighbours_on_fixture() {
    let u = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.0, 2.0, 0.1]);
    let cos = |a: usize, b: usize| {
        let (ra, rb) = (u.row(a), u.row(b));
        ra.dot(&rb) / (ra.norm() * rb.norm())
    };
    let got = word_cosine_neighbors(&u, 0, 4).unwrap();
    let mut expect: Vec<(usize, f64)> = (1..5).map(|j| (j, cos(0, j))).collect();
    expect.sort_by(|a, b| b.1.total_cmp(&a.1));
    assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), vec![4, 2, 1, 3]);
    for (g, e) in got.iter().zip(&expect) {
        assert_eq!(g.0, e.0);
        assert!((g.1 - e.1).abs() < 1e-15);
    }
    assert!((got[3].1 + 1.0).abs() < 1e-15);
}
