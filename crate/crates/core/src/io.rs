//! File formats: model JSON, corpus JSONL, spectrum JSON and CSV tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::MetricRecord;
use crate::fourier::FourierSpectrum;
use crate::ground::{GroundSet, Observation};
use crate::kernel::LowRankL;
use crate::optim::TraceEntry;

pub const MODEL_FORMAT: &str = "subdpp-model-v1";

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Meta {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Meta { config_hash: config_hash.into(), seed, version: env!("CARGO_PKG_VERSION").to_string() }
    }

    /// One-line form used as the leading comment of CSV outputs.
    pub fn comment(&self) -> String {
        format!("# config_hash={} seed={} version={}", self.config_hash, self.seed, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub ground: GroundSet,
    pub alpha: f64,
    pub gamma: f64,
    /// V rows of r entries.
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    /// Per-observation θ, when the model was fit that way.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

impl ModelFile {
    pub fn new(l: &LowRankL, thetas: Option<&[DVector<f64>]>, meta: Option<Meta>) -> Self {
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            ground: l.ground.clone(),
            alpha: l.alpha,
            gamma: l.gamma,
            u: l.u.row_iter().map(|r| r.iter().copied().collect()).collect(),
            theta: l.theta.iter().copied().collect(),
            thetas: thetas.map(|ts| ts.iter().map(|t| t.iter().copied().collect()).collect()),
            meta,
        }
    }

    pub fn u_matrix(&self) -> Result<DMatrix<f64>> {
        let v = self.u.len();
        let r = self.theta.len();
        if let Some(row) = self.u.iter().find(|row| row.len() != r) {
            return Err(Error::DimensionMismatch { expected: r, found: row.len() });
        }
        Ok(DMatrix::from_fn(v, r, |i, k| self.u[i][k]))
    }

    pub fn model(&self) -> Result<LowRankL> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("unknown model format {:?}", self.format)));
        }
        LowRankL::new(
            self.ground.clone(),
            self.alpha,
            self.gamma,
            self.u_matrix()?,
            DVector::from_column_slice(&self.theta),
        )
    }

    pub fn thetas(&self) -> Option<Vec<DVector<f64>>> {
        self.thetas.as_ref().map(|ts| ts.iter().map(|t| DVector::from_column_slice(t)).collect())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    serde_json::from_str(&s).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFile {
    pub m: usize,
    pub d: usize,
    pub a: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

impl SpectrumFile {
    pub fn new(s: &FourierSpectrum, meta: Option<Meta>) -> Self {
        SpectrumFile { m: s.m, d: s.d, a: s.a.clone(), meta }
    }

    pub fn spectrum(&self) -> Result<FourierSpectrum> {
        FourierSpectrum::new(self.m, self.d, self.a.clone())
    }
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: Meta,
}

/// Writes one JSON value per line, preceded by a `{"meta": …}` line when given.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, meta: Option<&Meta>, rows: &[T]) -> Result<()> {
    if let Some(m) = meta {
        serde_json::to_writer(&mut w, &MetaLine { meta: m.clone() })?;
        w.write_all(b"\n")?;
    }
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads JSONL, skipping blank lines and returning the leading meta line separately.
pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(r: R) -> Result<(Vec<T>, Option<Meta>)> {
    let mut rows = Vec::new();
    let mut meta = None;
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if rows.is_empty() && meta.is_none() {
            if let Ok(m) = serde_json::from_str::<MetaLine>(&line) {
                meta = Some(m.meta);
                continue;
            }
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        rows.push(row);
    }
    Ok((rows, meta))
}

pub fn write_corpus(path: &Path, meta: Option<&Meta>, corpus: &[Observation]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), meta, corpus)
}

pub fn read_corpus(path: &Path) -> Result<(Vec<Observation>, Option<Meta>)> {
    read_jsonl(BufReader::new(File::open(path)?))
}

/// Raw text document as read from a documents JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
}

fn csv_writer<W: Write>(mut w: W, meta: Option<&Meta>) -> Result<csv::Writer<W>> {
    if let Some(m) = meta {
        writeln!(w, "{}", m.comment())?;
    }
    Ok(csv::Writer::from_writer(w))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Columns: metric, value, r, V, seed, dataset, iteration.
pub fn write_metrics<W: Write>(w: W, meta: Option<&Meta>, records: &[MetricRecord]) -> Result<()> {
    let mut out = csv_writer(w, meta)?;
    for rec in records {
        out.serialize(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricRecord>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rd.deserialize().map(|x| x.map_err(csv_err)).collect()
}

/// Columns: round, block, observation, iteration, objective.
pub fn write_trace<W: Write>(w: W, meta: Option<&Meta>, trace: &[TraceEntry]) -> Result<()> {
    let mut out = csv_writer(w, meta)?;
    for e in trace {
        out.serialize(e).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceEntry>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rd.deserialize().map(|x| x.map_err(csv_err)).collect()
}

/// Tagged point sets, one row per point: `tag,set,x1,…,xm`.
pub fn write_points<W: Write>(w: W, meta: Option<&Meta>, sets: &[(String, Vec<Vec<f64>>)]) -> Result<()> {
    let dim = sets.iter().flat_map(|(_, s)| s.first()).map(Vec::len).next().unwrap_or(0);
    let mut out = csv_writer(w, meta)?;
    let mut header = vec!["tag".to_string(), "set".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    out.write_record(&header).map_err(csv_err)?;
    for (set, (tag, pts)) in sets.iter().enumerate() {
        for p in pts {
            let mut row = vec![tag.clone(), set.to_string()];
            row.extend(p.iter().map(|x| x.to_string()));
            out.write_record(&row).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}
