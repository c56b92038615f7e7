//! Text pipeline: vocabulary, binary sentence embeddings, greedy MAP extraction and
//! embedding neighbours.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground::{GroundSet, Observation};
use crate::kernel::LowRankL;
use crate::likelihood::{l_submatrix, PenaltyConfig, Problem, ThetaParams};
use crate::optim::{optimize_theta, OptimizerConfig};

const STOPWORDS_EN: &str = include_str!("../data/stopwords_en.txt");

/// The bundled English stopword list.
pub fn default_stopwords() -> HashSet<String> {
    STOPWORDS_EN.lines().map(str::trim).filter(|w| !w.is_empty()).map(String::from).collect()
}

/// Lowercased word tokens; apostrophes inside words are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Splits after '.', '!' or '?' when followed by whitespace or the end of the text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match chars.peek() {
                None => true,
                Some(&(_, n)) => n.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = end;
            }
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile")]
pub struct Vocabulary {
    pub words: Vec<String>,
    /// Token counts in the corpus the vocabulary was built from.
    pub counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if words.len() != counts.len() {
            return Err(Error::DimensionMismatch { expected: words.len(), found: counts.len() });
        }
        let index: HashMap<String, usize> =
            words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != words.len() {
            return Err(Error::InvalidParameter("duplicate vocabulary word".into()));
        }
        Ok(Vocabulary { words, counts, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }
}

#[derive(Deserialize)]
struct VocabularyFile {
    words: Vec<String>,
    counts: Vec<u64>,
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabularyFile) -> Result<Self> {
        Vocabulary::new(f.words, f.counts)
    }
}

/// The `v` most frequent non-stopword tokens; ties go to the lexicographically smaller word.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], v: usize, stopwords: &HashSet<String>) -> Result<Vocabulary> {
    if texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    for t in texts {
        for tok in tokenize(t.as_ref()) {
            if !stopwords.contains(&tok) {
                *freq.entry(tok).or_default() += 1;
            }
        }
    }
    if freq.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(v);
    let (words, counts) = ranked.into_iter().unzip();
    Vocabulary::new(words, counts)
}

/// Sentences of one document as word-indicator vectors, with their texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub sentences: Vec<Vec<u8>>,
    pub texts: Vec<String>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn observation(&self) -> Observation {
        Observation::Vectors(self.sentences.clone())
    }
}

/// Sentences without any vocabulary word are dropped.
pub fn sentence_embed(text: &str, vocab: &Vocabulary) -> Document {
    let mut doc = Document { sentences: Vec::new(), texts: Vec::new() };
    for s in split_sentences(text) {
        let mut bits = vec![0u8; vocab.len()];
        let mut any = false;
        for tok in tokenize(&s) {
            if let Some(i) = vocab.get(&tok) {
                bits[i] = 1;
                any = true;
            }
        }
        if any {
            doc.sentences.push(bits);
            doc.texts.push(s);
        }
    }
    doc
}

/// Indices of rows that are linearly independent of all earlier kept rows.
pub fn independent_rows(rows: &[Vec<u8>]) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let mut x = DVector::from_iterator(r.len(), r.iter().map(|&b| b as f64));
        let n0 = x.norm_squared();
        if n0 == 0.0 {
            continue;
        }
        // two passes of Gram–Schmidt
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&x);
                x.axpy(-c, q, 1.0);
            }
        }
        let n = x.norm_squared();
        if n > 1e-10 * n0 {
            basis.push(x / n.sqrt());
            keep.push(i);
        }
    }
    keep
}

/// Training observations: each document reduced to linearly independent sentences, so that
/// every observation has a nonsingular kernel submatrix. Empty documents are skipped.
pub fn documents_to_corpus(docs: &[Document]) -> Vec<Observation> {
    docs.iter()
        .filter_map(|d| {
            let keep = independent_rows(&d.sentences);
            (!keep.is_empty()).then(|| Observation::Vectors(keep.iter().map(|&i| d.sentences[i].clone()).collect()))
        })
        .collect()
}

/// Per-word fraction of sentences containing the word, kept inside (0, 1).
pub fn sentence_frequencies(docs: &[Document], v: usize) -> Result<Vec<f64>> {
    let total: usize = docs.iter().map(Document::len).sum();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut counts = vec![0usize; v];
    for d in docs {
        for s in &d.sentences {
            for (c, &b) in counts.iter_mut().zip(s) {
                *c += b as usize;
            }
        }
    }
    let lo = 0.5 / total as f64;
    Ok(counts.iter().map(|&c| (c as f64 / total as f64).clamp(lo, 1.0 - lo)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyResult {
    /// Selected indices in the order they were added.
    pub selected: Vec<usize>,
    /// Increase of log det at each step.
    pub gains: Vec<f64>,
}

/// Greedy maximization of `log det L_Y` over |Y| = l.
pub fn greedy_map(l_x: &DMatrix<f64>, l: usize) -> Result<GreedyResult> {
    greedy_map_scaled(l_x, &DVector::zeros(l_x.nrows()), l)
}

/// Greedy MAP for `L_X = Diag(w)^{1/2} C Diag(w)^{1/2}` given C and `log w`; the weights
/// add `log wᵢ` to each gain and otherwise stay out of the arithmetic.
pub fn greedy_map_scaled(core: &DMatrix<f64>, log_w: &DVector<f64>, l: usize) -> Result<GreedyResult> {
    let n = core.nrows();
    if l > n {
        return Err(Error::InfeasibleSize { requested: l, available: n });
    }
    // Residual Schur-complement diagonal and the rows of the growing Cholesky factor.
    let mut d2: Vec<f64> = (0..n).map(|i| core[(i, i)]).collect();
    let mut c: Vec<Vec<f64>> = vec![Vec::with_capacity(l); n];
    let mut taken = vec![false; n];
    let mut out = GreedyResult { selected: Vec::with_capacity(l), gains: Vec::with_capacity(l) };
    for _ in 0..l {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] || !(d2[i] > 1e-12 * core[(i, i)].abs()) {
                continue;
            }
            let gain = log_w[i] + d2[i].ln();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let Some((j, gain)) = best else {
            return Err(Error::RankDeficientSelection { selected: out.selected.len() });
        };
        taken[j] = true;
        out.selected.push(j);
        out.gains.push(gain);
        let dj = d2[j].sqrt();
        let cj = c[j].clone();
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let dot: f64 = cj.iter().zip(&c[i]).map(|(a, b)| a * b).sum();
            let e = (core[(j, i)] - dot) / dj;
            c[i].push(e);
            d2[i] -= e * e;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub doc_id: String,
    /// Sentence indices (into the document's retained sentences) in selection order.
    pub selected: Vec<usize>,
    pub gains: Vec<f64>,
    /// Selected sentence texts in document order.
    pub text: Vec<String>,
}

/// Optional per-document θ fit used by [`summarize_document`].
#[derive(Debug, Clone, Copy)]
pub struct ThetaFit<'a> {
    pub pen: &'a PenaltyConfig,
    pub cfg: &'a OptimizerConfig,
}

/// Embeds a document and extracts an l-sentence summary by greedy MAP under `model`.
pub fn summarize_document(
    doc_id: &str,
    text: &str,
    model: &LowRankL,
    vocab: &Vocabulary,
    l: usize,
    fit_theta: Option<ThetaFit<'_>>,
) -> Result<SummaryRecord> {
    if !matches!(model.ground, GroundSet::Hypercube { .. }) || model.dim() != vocab.len() {
        return Err(Error::DimensionMismatch { expected: vocab.len(), found: model.dim() });
    }
    let doc = sentence_embed(text, vocab);
    summarize_embedded(doc_id, &doc, model, l, fit_theta)
}

pub fn summarize_embedded(
    doc_id: &str,
    doc: &Document,
    model: &LowRankL,
    l: usize,
    fit_theta: Option<ThetaFit<'_>>,
) -> Result<SummaryRecord> {
    if l > doc.len() {
        return Err(Error::InfeasibleSize { requested: l, available: doc.len() });
    }
    let mut model = model.clone();
    if let Some(f) = fit_theta {
        let keep = independent_rows(&doc.sentences);
        let obs = Observation::Vectors(keep.iter().map(|&i| doc.sentences[i].clone()).collect());
        let problem = Problem::new(model.ground.clone(), model.alpha, model.gamma, &[obs])?;
        let theta = optimize_theta(
            &problem,
            &model.u,
            ThetaParams::PerObservation(vec![model.theta.clone()]),
            f.pen,
            f.cfg,
        )?;
        model.theta = theta.get(0).clone();
    }
    let sub = l_submatrix(&model, &doc.observation())?;
    let g = greedy_map_scaled(&sub.core, &sub.log_p, l)?;
    let mut order = g.selected.clone();
    order.sort_unstable();
    Ok(SummaryRecord {
        doc_id: doc_id.to_string(),
        selected: g.selected,
        gains: g.gains,
        text: order.iter().map(|&i| doc.texts[i].clone()).collect(),
    })
}

/// Top-k rows of U by cosine similarity to row w (excluding w); ties go to the lower index.
/// Rows with zero norm are skipped.
pub fn word_cosine_neighbors(u: &DMatrix<f64>, w: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    if w >= u.nrows() {
        return Err(Error::DimensionMismatch { expected: u.nrows(), found: w });
    }
    let norms: Vec<f64> = u.row_iter().map(|r| r.norm()).collect();
    if norms[w] == 0.0 {
        return Err(Error::UnembeddedWord(w));
    }
    let mut sims: Vec<(usize, f64)> = (0..u.nrows())
        .filter(|&v| v != w && norms[v] > 0.0)
        .map(|v| (v, u.row(v).dot(&u.row(w)) / (norms[v] * norms[w])))
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(k);
    Ok(sims)
}
