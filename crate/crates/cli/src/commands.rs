use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use subdpp::eval::{
    aggregate, best_diagonal_baseline, chance_level, loglik_gap, sign_aligned_distance, subspace_distance,
    MetricRecord,
};
use subdpp::fourier::{export_kernel_grid, synth_spectrum, write_grid_csv, FeatureKernel};
use subdpp::io::{
    read_corpus, read_json, read_jsonl, write_corpus, write_json, write_jsonl, write_metrics,
    write_points, write_trace, Meta, ModelFile, RawDocument, SpectrumFile,
};
use subdpp::likelihood::{ScaledIdentity, SpectralObservation};
use subdpp::optim::{fit as fit_model, fit_spectrum, Block, TraceEntry};
use subdpp::sampling::{build_dense, sample_dpp, sample_uniform_iid};
use subdpp::summarize::{
    build_vocab, default_stopwords, documents_to_corpus, sentence_embed, sentence_frequencies,
    summarize_embedded, word_cosine_neighbors, ThetaFit, Vocabulary,
};
use subdpp::{
    FourierSpectrum, GroundSet, LowRankL, Observation, Problem, ThetaMode, ThetaParams,
};

use crate::config::{ExperimentConfig, GroundSpec};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const TRUTH_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;
const FIT_STREAM: u64 = 2;

/// Counter-based split of the experiment seed: one ChaCha stream per (replicate, purpose).
fn stream(seed: u64, replicate: usize, purpose: u64) -> ChaCha8Rng {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    g.set_stream(((replicate as u64) << 8) | purpose);
    g
}

fn variant(mode: ThetaMode) -> &'static str {
    match mode {
        ThetaMode::Shared => "shared",
        ThetaMode::PerObservation => "per_observation",
    }
}

fn rep_dir(root: &Path, rep: usize, mode: ThetaMode) -> PathBuf {
    root.join(format!("rep{rep:02}")).join(variant(mode))
}

fn cell_dir(root: &Path, rep: usize, mode: ThetaMode, r: usize) -> PathBuf {
    rep_dir(root, rep, mode).join(format!("r{r}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(subdpp::Error::from)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(subdpp::Error::from)?))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Lib(e.into()))
}

// generate ---------------------------------------------------------------------------

fn truth_model(cfg: &ExperimentConfig, rep: usize) -> Result<LowRankL> {
    let mut g = stream(cfg.seed, rep, TRUTH_STREAM);
    let v = cfg.ground.dim();
    let ground = match &cfg.ground {
        GroundSpec::Items { v } => GroundSet::items(*v)?,
        GroundSpec::Hypercube { pi: Some(pi), .. } => GroundSet::hypercube(pi.clone())?,
        GroundSpec::Hypercube { v, pi: None } => {
            GroundSet::hypercube((0..*v).map(|_| g.random_range(0.2..0.8)).collect())?
        }
        GroundSpec::Fourier { .. } => unreachable!("spectra are generated separately"),
    };
    let normal = Normal::new(0.0, 1.0 / (v as f64).sqrt()).expect("positive std");
    let u = DMatrix::from_fn(v, cfg.r_star, |_, _| normal.sample(&mut g));
    let theta = draw_theta(cfg, &mut g);
    Ok(LowRankL::new(ground, cfg.alpha(), cfg.gamma(), u, theta)?)
}

fn draw_theta(cfg: &ExperimentConfig, g: &mut ChaCha8Rng) -> DVector<f64> {
    let [lo, hi] = cfg.theta_range;
    DVector::from_fn(cfg.r_star, |_, _| g.random_range(lo..hi))
}

fn write_split(dir: &Path, meta: &Meta, corpus: &[Observation], n_test: usize) -> Result<()> {
    let cut = corpus.len() - n_test;
    write_corpus(&dir.join("train.jsonl"), Some(meta), &corpus[..cut])?;
    write_corpus(&dir.join("test.jsonl"), Some(meta), &corpus[cut..])?;
    Ok(())
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let meta = cfg.meta();
    (0..cfg.replicates).into_par_iter().try_for_each(|rep| -> Result<()> {
        let mut g = stream(cfg.seed, rep, SAMPLE_STREAM);
        if let GroundSpec::Fourier { n, beta } = cfg.ground {
            let spec = synth_spectrum(n, beta)?;
            let dense = build_dense(&LowRankL::from_spectrum(&spec)?, cfg.cap)?;
            let corpus: Vec<Observation> =
                (0..cfg.samples).map(|_| dense.items().select(&sample_dpp(&dense, &mut g))).collect();
            let dir = rep_dir(out, rep, ThetaMode::Shared);
            mkdir(&dir)?;
            write_json(&dir.join("truth.json"), &SpectrumFile::new(&spec, Some(meta.clone())))?;
            return write_split(&dir, &meta, &corpus, cfg.n_test());
        }
        let truth = truth_model(cfg, rep)?;

        let dense = build_dense(&truth, cfg.cap)?;
        let shared: Vec<Observation> =
            (0..cfg.samples).map(|_| dense.items().select(&sample_dpp(&dense, &mut g))).collect();
        let dir = rep_dir(out, rep, ThetaMode::Shared);
        mkdir(&dir)?;
        write_json(&dir.join("truth.json"), &ModelFile::new(&truth, None, Some(meta.clone())))?;
        write_split(&dir, &meta, &shared, cfg.n_test())?;

        // each observation from its own θᵢ with U held fixed
        let mut thetas = Vec::with_capacity(cfg.samples);
        let mut own = Vec::with_capacity(cfg.samples);
        for _ in 0..cfg.samples {
            let theta = draw_theta(cfg, &mut g);
            let d = build_dense(&truth.with_theta(theta.clone()), cfg.cap)?;
            own.push(d.items().select(&sample_dpp(&d, &mut g)));
            thetas.push(theta);
        }
        let dir = rep_dir(out, rep, ThetaMode::PerObservation);
        mkdir(&dir)?;
        write_json(&dir.join("truth.json"), &ModelFile::new(&truth, Some(&thetas), Some(meta.clone())))?;
        write_split(&dir, &meta, &own, cfg.n_test())
    })
}

// fit --------------------------------------------------------------------------------

enum Truth {
    Model(LowRankL),
    Spectrum(FourierSpectrum),
}

fn read_truth(path: &Path) -> Result<Truth> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("format").is_some() {
        let file: ModelFile = serde_json::from_value(value).map_err(subdpp::Error::from)?;
        Ok(Truth::Model(file.model()?))
    } else {
        let file: SpectrumFile = serde_json::from_value(value).map_err(subdpp::Error::from)?;
        Ok(Truth::Spectrum(file.spectrum()?))
    }
}

fn fit_seed(cfg: &ExperimentConfig, rep: usize, r: usize) -> u64 {
    let mut g = stream(cfg.seed, rep, FIT_STREAM);
    g.set_word_pos(2 * r as u128);
    g.next_u64()
}

fn already_fit(path: &Path, meta: &Meta) -> bool {
    let Ok(value) = read_json::<serde_json::Value>(path) else { return false };
    value.get("meta").and_then(|m| serde_json::from_value::<Meta>(m.clone()).ok()).as_ref() == Some(meta)
}

fn mean_theta(theta: &ThetaParams) -> DVector<f64> {
    match theta {
        ThetaParams::Shared(t) => t.clone(),
        ThetaParams::PerObservation(ts) => {
            ts.iter().fold(DVector::zeros(ts[0].len()), |acc, t| acc + t) / ts.len() as f64
        }
    }
}

fn fit_cell(cfg: &ExperimentConfig, data: &Path, out: &Path, rep: usize, r: usize, resume: bool) -> Result<()> {
    let meta = cfg.meta();
    let src = rep_dir(data, rep, cfg.mode);
    let truth = read_truth(&src.join("truth.json"))?;
    let (train, _) = read_corpus(&src.join("train.jsonl"))?;
    let dir = match truth {
        Truth::Spectrum(_) => rep_dir(out, rep, cfg.mode).join("spectrum"),
        Truth::Model(_) => cell_dir(out, rep, cfg.mode, r),
    };
    if resume && already_fit(&dir.join("model.json"), &meta) {
        return Ok(());
    }
    mkdir(&dir)?;
    let opt = subdpp::OptimizerConfig { seed: fit_seed(cfg, rep, r), ..cfg.optimizer };
    match truth {
        Truth::Spectrum(spec) => {
            let ground = GroundSet::continuous_fourier(spec.m, spec.d)?;
            let obs = train.iter().map(|x| SpectralObservation::new(&ground, x)).collect::<subdpp::Result<Vec<_>>>()?;
            let init = FourierSpectrum::new(spec.m, spec.d, vec![1.0; spec.a.len()])?;
            let rep_fit = fit_spectrum(&obs, &init, &cfg.penalty, &opt)?;
            let trace: Vec<TraceEntry> = rep_fit
                .trace
                .iter()
                .enumerate()
                .map(|(i, &objective)| TraceEntry { round: 0, block: Block::Spectrum, observation: None, iteration: i, objective })
                .collect();
            write_json(&dir.join("model.json"), &SpectrumFile::new(&rep_fit.spectrum, Some(meta.clone())))?;
            write_trace(create(&dir.join("trace.csv"))?, Some(&meta), &trace)?;
        }
        Truth::Model(l) => {
            let problem = Problem::new(l.ground.clone(), l.alpha, l.gamma, &train)?;
            let report = fit_model(&problem, r, &cfg.penalty, &opt, cfg.mode)?;
            write_fit(&problem, &report, &dir, &meta)?;
        }
    }
    Ok(())
}

fn write_fit(problem: &Problem, report: &subdpp::FitReport, dir: &Path, meta: &Meta) -> Result<()> {
    let model = problem.model(&report.u, &mean_theta(&report.theta))?;
    let thetas = match &report.theta {
        ThetaParams::Shared(_) => None,
        ThetaParams::PerObservation(ts) => Some(ts.as_slice()),
    };
    write_json(&dir.join("model.json"), &ModelFile::new(&model, thetas, Some(meta.clone())))?;
    write_trace(create(&dir.join("trace.csv"))?, Some(meta), &report.trace)?;
    Ok(())
}

fn is_fourier(cfg: &ExperimentConfig) -> bool {
    matches!(cfg.ground, GroundSpec::Fourier { .. })
}

/// Cells of the (replicate, rank) grid; spectra have no rank to sweep.
fn cells(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    let ranks = if is_fourier(cfg) { vec![cfg.ground.dim()] } else { cfg.ranks.clone() };
    (0..cfg.replicates).flat_map(|rep| ranks.iter().map(move |&r| (rep, r))).collect()
}

pub fn fit(cfg: &ExperimentConfig, data: &Path, out: &Path, resume: bool) -> Result<()> {
    if is_fourier(cfg) && cfg.mode == ThetaMode::PerObservation {
        return Err(CliError::Config("spectra are fit in shared mode only".into()));
    }
    cells(cfg).into_par_iter().try_for_each(|(rep, r)| fit_cell(cfg, data, out, rep, r, resume))
}

fn read_documents(path: &Path) -> Result<Vec<RawDocument>> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(read_jsonl(BufReader::new(file))?.0)
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Ok(read_json(path)?)
}

pub fn fit_docs(cfg: &ExperimentConfig, docs: &Path, vocab: &Path, rank: Option<usize>, out: &Path) -> Result<()> {
    let vocab = read_vocab(vocab)?;
    let docs: Vec<_> = read_documents(docs)?.iter().map(|d| sentence_embed(&d.text, &vocab)).collect();
    let corpus = documents_to_corpus(&docs);
    let v = vocab.len();
    let r = rank.unwrap_or(cfg.ranks[0]);
    if r == 0 || r > v {
        return Err(CliError::Config(format!("rank {r} outside 1..={v}")));
    }
    let ground = GroundSet::hypercube(sentence_frequencies(&docs, v)?)?;
    let gamma = cfg.gamma.unwrap_or(1.0 / v as f64);
    let problem = Problem::new(ground, 0.0, gamma, &corpus)?;
    let opt = subdpp::OptimizerConfig { seed: fit_seed(cfg, 0, r), ..cfg.optimizer };
    let report = fit_model(&problem, r, &cfg.penalty, &opt, cfg.mode)?;
    mkdir(out)?;
    write_fit(&problem, &report, out, &cfg.meta())
}

// eval -------------------------------------------------------------------------------

fn record(metric: &str, value: f64, r: usize, cfg: &ExperimentConfig, rep: usize) -> MetricRecord {
    MetricRecord {
        metric: metric.to_string(),
        value,
        r,
        v: cfg.ground.dim(),
        seed: cfg.seed,
        dataset: format!("rep{rep:02}/{}", variant(cfg.mode)),
        iteration: None,
    }
}

fn eval_cell(cfg: &ExperimentConfig, data: &Path, fits: &Path, rep: usize, r: usize) -> Result<Vec<MetricRecord>> {
    let src = rep_dir(data, rep, cfg.mode);
    let truth = read_truth(&src.join("truth.json"))?;
    let (test, _) = read_corpus(&src.join("test.jsonl"))?;
    let mut rows = Vec::new();
    match truth {
        Truth::Spectrum(spec) => {
            let fitted = read_truth(&rep_dir(fits, rep, cfg.mode).join("spectrum").join("model.json"))?;
            let Truth::Spectrum(fitted) = fitted else {
                return Err(CliError::Config("expected a fitted spectrum".into()));
            };
            let (train, _) = read_corpus(&src.join("train.jsonl"))?;
            let ground = GroundSet::continuous_fourier(spec.m, spec.d)?;
            let base = best_diagonal_baseline(&train, &ground)?;
            let baseline = ScaledIdentity { eta: base.eta, n: ground.dim() };
            rows.push(record("loglik_gap", loglik_gap(&fitted, &spec, &test)?, r, cfg, rep));
            rows.push(record("baseline_gap", loglik_gap(&baseline, &spec, &test)?, r, cfg, rep));
        }
        Truth::Model(l) => {
            let Truth::Model(fitted) = read_truth(&cell_dir(fits, rep, cfg.mode, r).join("model.json"))? else {
                return Err(CliError::Config("expected a fitted low-rank model".into()));
            };
            if cfg.mode == ThetaMode::Shared {
                rows.push(record("loglik_gap", loglik_gap(&fitted, &l, &test)?, r, cfg, rep));
            }
            rows.push(record("subspace_distance", subspace_distance(&fitted.u, &l.u)?.value, r, cfg, rep));
            // item DPPs are invariant under row sign flips of U, which D does not quotient out
            if matches!(l.ground, GroundSet::Items { .. }) {
                let d = sign_aligned_distance(&fitted.u, fitted.theta.as_slice(), &l.u, l.theta.as_slice())?;
                rows.push(record("subspace_distance_aligned", d.value, r, cfg, rep));
            }
        }
    }
    Ok(rows)
}

pub fn eval(
    cfg: &ExperimentConfig,
    data: &Path,
    fits: &Path,
    out: &Path,
    summary: Option<&Path>,
    chance_trials: usize,
) -> Result<()> {
    let per_cell: Vec<Vec<MetricRecord>> = cells(cfg)
        .into_par_iter()
        .map(|(rep, r)| eval_cell(cfg, data, fits, rep, r))
        .collect::<Result<_>>()?;
    let v = cfg.ground.dim();
    let mut rows = Vec::new();
    for (cell, (rep, r)) in per_cell.into_iter().zip(cells(cfg)) {
        rows.extend(cell);
        if !is_fourier(cfg) {
            let chance = chance_level(v, r, chance_trials, cfg.seed)?;
            rows.push(record("chance", chance.analytic, r, cfg, rep));
            if chance_trials > 0 {
                rows.push(record("chance_mc", chance.mean_d, r, cfg, rep));
            }
        }
    }
    let meta = cfg.meta();
    write_metrics(create(out)?, Some(&meta), &rows)?;
    if let Some(path) = summary {
        let mut w = csv::Writer::from_writer(create(path)?);
        for s in aggregate(&rows) {
            w.serialize(s).map_err(|e| subdpp::Error::Parse(e.to_string()))?;
        }
        w.flush().map_err(subdpp::Error::from)?;
    }
    Ok(())
}

// sample -----------------------------------------------------------------------------

pub fn sample(model: &Path, out: &Path, count: usize, seed: u64) -> Result<()> {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let meta = Meta::new("", seed);
    mkdir(out)?;
    match read_truth(model)? {
        Truth::Spectrum(spec) => {
            let dense = build_dense(&LowRankL::from_spectrum(&spec)?, subdpp::sampling::DEFAULT_CAP)?;
            let mut dpp = Vec::with_capacity(count);
            let mut iid = Vec::with_capacity(count);
            for _ in 0..count {
                let Observation::Points(pts) = dense.items().select(&sample_dpp(&dense, &mut g)) else {
                    unreachable!("grid elements are points")
                };
                iid.push(("iid".to_string(), sample_uniform_iid(pts.len(), spec.m, &mut g)));
                dpp.push(("dpp".to_string(), pts));
            }
            write_points(create(&out.join("dpp.csv"))?, Some(&meta), &dpp)?;
            write_points(create(&out.join("iid.csv"))?, Some(&meta), &iid)?;
        }
        Truth::Model(l) => {
            let dense = build_dense(&l, subdpp::sampling::DEFAULT_CAP)?;
            let draws: Vec<Observation> =
                (0..count).map(|_| dense.items().select(&sample_dpp(&dense, &mut g))).collect();
            write_corpus(&out.join("samples.jsonl"), Some(&meta), &draws)?;
        }
    }
    Ok(())
}

pub fn kernel_grid(model: &Path, q: [f64; 2], res: usize, out: &Path) -> Result<()> {
    let Truth::Spectrum(spec) = read_truth(model)? else {
        return Err(CliError::Config("kernel-grid needs a spectrum file".into()));
    };
    if spec.m != 2 || res == 0 {
        return Err(CliError::Config("kernel-grid needs a two-dimensional spectrum and res > 0".into()));
    }
    let grid = export_kernel_grid(spec.d, &FeatureKernel::Diagonal(spec.marginal()), q, res)?;
    let mut w = create(out)?;
    writeln!(w, "{}", Meta::new("", 0).comment()).map_err(subdpp::Error::from)?;
    write_grid_csv(w, &grid)?;
    Ok(())
}

// text -------------------------------------------------------------------------------

pub fn summarize(
    cfg: &ExperimentConfig,
    model: &Path,
    vocab: &Path,
    docs: &Path,
    l: usize,
    fit_theta: bool,
    out: &Path,
) -> Result<()> {
    let Truth::Model(model) = read_truth(model)? else {
        return Err(CliError::Config("summarize needs a sentence model".into()));
    };
    let vocab = read_vocab(vocab)?;
    if !matches!(model.ground, GroundSet::Hypercube { .. }) || model.dim() != vocab.len() {
        return Err(CliError::Config(format!(
            "model dimension {} does not match vocabulary size {}",
            model.dim(),
            vocab.len()
        )));
    }
    let raw = read_documents(docs)?;
    let records = raw
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let id = d.id.clone().unwrap_or_else(|| i.to_string());
            let doc = sentence_embed(&d.text, &vocab);
            let fit = fit_theta.then_some(ThetaFit { pen: &cfg.penalty, cfg: &cfg.optimizer });
            summarize_embedded(&id, &doc, &model, l, fit).map_err(|e| with_context(e, &id))
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(create(out)?, Some(&cfg.meta()), &records)?;
    Ok(())
}

/// Numerical failures keep their own exit code; the rest gain the document id.
fn with_context(e: subdpp::Error, id: &str) -> CliError {
    if e.is_numerical() {
        CliError::Lib(e)
    } else {
        CliError::Config(format!("document {id}: {e}"))
    }
}

pub fn neighbors(model: &Path, vocab: &Path, word: &str, k: usize) -> Result<()> {
    let Truth::Model(model) = read_truth(model)? else {
        return Err(CliError::Config("neighbors needs a sentence model".into()));
    };
    let vocab = read_vocab(vocab)?;
    let w = vocab.get(word).ok_or_else(|| CliError::Config(format!("word {word:?} is not in the vocabulary")))?;
    if model.dim() != vocab.len() {
        return Err(CliError::Config("model and vocabulary sizes differ".into()));
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = |e: std::io::Error| CliError::Lib(e.into());
    writeln!(out, "word,neighbor,similarity").map_err(io)?;
    for (j, sim) in word_cosine_neighbors(&model.u, w, k)? {
        writeln!(out, "{word},{},{sim}", vocab.words[j]).map_err(io)?;
    }
    Ok(())
}

pub fn vocab(docs: &Path, size: usize, out: &Path) -> Result<()> {
    let texts: Vec<String> = read_documents(docs)?.into_iter().map(|d| d.text).collect();
    let vocab = build_vocab(&texts, size, &default_stopwords())?;
    write_json(out, &vocab)?;
    Ok(())
}
