//! Benchmark files: the CALB experiment container, the manifest CSV and the results CSV.
//!
//! CALB layout, all little-endian:
//!
//! ```text
//! "CALB" | u32 version=1 | u32 n_cal | u32 n_test | u32 K
//! f64 p_cal[n_cal·K] (row-major) | u32 y_cal[n_cal]
//! f64 p_test[n_test·K]           | u32 y_test[n_test]
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{Experiment, LabelVector, ProbError, ProbabilityMatrix, Task};

pub const CALB_MAGIC: &[u8; 4] = b"CALB";
pub const CALB_VERSION: u32 = 1;
pub const CALB_HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("not a CALB file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported CALB version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("invalid experiment data: {0}")]
    Validation(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("experiment {id}: manifest says {manifest:?} but file header says {file:?}")]
    CountMismatch {
        id: String,
        /// `(n_cal, n_test, K)`
        manifest: (usize, usize, usize),
        file: (usize, usize, usize),
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ProbError> for IoError {
    fn from(e: ProbError) -> Self {
        IoError::Validation(e.to_string())
    }
}

impl From<csv::Error> for IoError {
    fn from(e: csv::Error) -> Self {
        IoError::Csv(e.to_string())
    }
}

/// Header fields `(n_cal, n_test, K)`.
pub type CalbCounts = (usize, usize, usize);

pub fn calb_len(n_cal: usize, n_test: usize, k: usize) -> usize {
    CALB_HEADER_LEN + 8 * k * (n_cal + n_test) + 4 * (n_cal + n_test)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn parse_header(bytes: &[u8]) -> Result<CalbCounts, IoError> {
    if bytes.len() < 4 {
        return Err(IoError::TruncatedFile { expected: CALB_HEADER_LEN, actual: bytes.len() });
    }
    if &bytes[..4] != CALB_MAGIC {
        return Err(IoError::BadMagic(bytes[..4].try_into().expect("four bytes")));
    }
    if bytes.len() < 8 {
        return Err(IoError::TruncatedFile { expected: CALB_HEADER_LEN, actual: bytes.len() });
    }
    let version = u32_at(bytes, 4);
    if version != CALB_VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    if bytes.len() < CALB_HEADER_LEN {
        return Err(IoError::TruncatedFile { expected: CALB_HEADER_LEN, actual: bytes.len() });
    }
    Ok((u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize, u32_at(bytes, 16) as usize))
}

/// Reads only the header counts.
pub fn read_counts(path: &Path) -> Result<CalbCounts, IoError> {
    let mut buf = Vec::with_capacity(CALB_HEADER_LEN);
    File::open(path)?.take(CALB_HEADER_LEN as u64).read_to_end(&mut buf)?;
    parse_header(&buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn f64s(&mut self, count: usize) -> Vec<f64> {
        let out = self.bytes[self.at..self.at + 8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        self.at += 8 * count;
        out
    }

    fn u32s(&mut self, count: usize) -> Vec<u32> {
        let out = self.bytes[self.at..self.at + 4 * count]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        self.at += 4 * count;
        out
    }
}

/// Decodes a CALB byte stream. Identification fields are left for the caller to fill.
pub fn decode_experiment(bytes: &[u8]) -> Result<Experiment, IoError> {
    let (n_cal, n_test, k) = parse_header(bytes)?;
    let expected = calb_len(n_cal, n_test, k);
    if bytes.len() < expected {
        return Err(IoError::TruncatedFile { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(IoError::Validation(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut cur = Cursor { bytes, at: CALB_HEADER_LEN };
    let p_cal = Array2::from_shape_vec((n_cal, k), cur.f64s(n_cal * k)).expect("n_cal × K");
    let y_cal = cur.u32s(n_cal);
    let p_test = Array2::from_shape_vec((n_test, k), cur.f64s(n_test * k)).expect("n_test × K");
    let y_test = cur.u32s(n_test);
    let e = Experiment {
        id: String::new(),
        dataset: String::new(),
        model: String::new(),
        task: Task::for_classes(k),
        p_cal: ProbabilityMatrix::new(p_cal)?,
        y_cal: LabelVector::new(y_cal),
        p_test: ProbabilityMatrix::new(p_test)?,
        y_test: LabelVector::new(y_test),
    };
    e.validate()?;
    Ok(e)
}

/// Reads an experiment file; the id is taken from the file stem.
pub fn read_experiment(path: &Path) -> Result<Experiment, IoError> {
    let bytes = std::fs::read(path)?;
    let mut e = decode_experiment(&bytes)?;
    e.id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(e)
}

pub fn encode_experiment(e: &Experiment) -> Result<Vec<u8>, IoError> {
    e.validate()?;
    let (n_cal, n_test, k) = (e.p_cal.n(), e.p_test.n(), e.k());
    let count = |v: usize| {
        u32::try_from(v).map_err(|_| IoError::Validation(format!("count {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(calb_len(n_cal, n_test, k));
    out.extend_from_slice(CALB_MAGIC);
    for v in [CALB_VERSION, count(n_cal)?, count(n_test)?, count(k)?] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (p, y) in [(&e.p_cal, &e.y_cal), (&e.p_test, &e.y_test)] {
        for v in p.values().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in y.as_slice() {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_experiment(e: &Experiment, path: &Path) -> Result<(), IoError> {
    let bytes = encode_experiment(e)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// One line of a benchmark manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub experiment_id: String,
    pub dataset: String,
    pub model: String,
    pub task: String,
    /// Experiment file, relative to the manifest's directory.
    pub path: String,
    pub n_cal: usize,
    pub n_test: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub config: String,
}

impl ManifestRow {
    pub fn task(&self) -> Result<Task, IoError> {
        self.task.parse().map_err(|e: String| IoError::Csv(e))
    }

    pub fn resolve(&self, base: &Path) -> PathBuf {
        base.join(&self.path)
    }
}

/// Parses a manifest; with `verify`, each file's header counts are checked against the row.
pub fn load_manifest(path: &Path, verify: bool) -> Result<Vec<ManifestRow>, IoError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows: Vec<ManifestRow> = Vec::new();
    for rec in reader.deserialize() {
        let row: ManifestRow = rec?;
        if rows.iter().any(|r| r.experiment_id == row.experiment_id) {
            return Err(IoError::Csv(format!("duplicate experiment_id `{}`", row.experiment_id)));
        }
        row.task()?;
        rows.push(row);
    }
    if verify {
        let base = path.parent().unwrap_or(Path::new("."));
        for row in &rows {
            let file = read_counts(&row.resolve(base))?;
            let manifest = (row.n_cal, row.n_test, row.k);
            if file != manifest {
                return Err(IoError::CountMismatch { id: row.experiment_id.clone(), manifest, file });
            }
        }
    }
    Ok(rows)
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(MANIFEST_HEADER)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub const MANIFEST_HEADER: [&str; 9] =
    ["experiment_id", "dataset", "model", "task", "path", "n_cal", "n_test", "K", "config"];

/// Loads the experiment a manifest row points at and fills in its identification.
pub fn load_experiment(row: &ManifestRow, base: &Path) -> Result<Experiment, IoError> {
    let mut e = read_experiment(&row.resolve(base))?;
    let file = (e.p_cal.n(), e.p_test.n(), e.k());
    let manifest = (row.n_cal, row.n_test, row.k);
    if file != manifest {
        return Err(IoError::CountMismatch { id: row.experiment_id.clone(), manifest, file });
    }
    e.id = row.experiment_id.clone();
    e.dataset = row.dataset.clone();
    e.model = row.model.clone();
    e.task = row.task()?;
    e.validate()?;
    Ok(e)
}

/// One metric of one calibrator on one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub benchmark: String,
    pub experiment_id: String,
    pub calibrator: String,
    pub metric: String,
    pub value_before: f64,
    pub value_after: f64,
    pub phi: f64,
    pub fit_ms: f64,
    pub predict_ms: f64,
    /// Fit conditions, `;`-separated in the file.
    pub flags: Vec<String>,
}

pub const RESULTS_HEADER: [&str; 10] = [
    "benchmark",
    "experiment_id",
    "calibrator",
    "metric",
    "value_before",
    "value_after",
    "phi",
    "fit_ms",
    "predict_ms",
    "flags",
];

/// `%.17g` formatting: 17 significant digits, trailing zeros dropped, exponent form
/// outside `[1e-5, 1e17)`.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    }
}

pub fn parse_real(s: &str) -> Result<f64, IoError> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| IoError::Csv(format!("not a number: `{s}`"))),
    }
}

pub fn write_results_to<W: Write>(rows: &[ResultRow], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.benchmark.as_str(),
            &r.experiment_id,
            &r.calibrator,
            &r.metric,
            &format_g17(r.value_before),
            &format_g17(r.value_after),
            &format_g17(r.phi),
            &format_g17(r.fit_ms),
            &format_g17(r.predict_ms),
            &r.flags.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<(), IoError> {
    write_results_to(rows, BufWriter::new(File::create(path)?))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, IoError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER) {
        return Err(IoError::Csv(format!("unexpected results header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(ResultRow {
            benchmark: rec[0].to_string(),
            experiment_id: rec[1].to_string(),
            calibrator: rec[2].to_string(),
            metric: rec[3].to_string(),
            value_before: parse_real(&rec[4])?,
            value_after: parse_real(&rec[5])?,
            phi: parse_real(&rec[6])?,
            fit_ms: parse_real(&rec[7])?,
            predict_ms: parse_real(&rec[8])?,
            flags: rec[9].split(';').filter(|s| !s.is_empty()).map(str::to_string).collect(),
        });
    }
    Ok(rows)
}
