//! Fits every requested calibrator on every experiment of a benchmark and scores it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use calbench::io::{load_experiment, load_manifest, write_results, ManifestRow, ResultRow};
use calbench::metrics::{MetricId, MetricReport};
use calbench::{Calibrator, CalibratorKind, Experiment, ProbabilityMatrix, Task};
use rayon::prelude::*;

use crate::{CliError, MANIFEST_FILE};

/// Row flag for a fit that failed and was replaced by the identity map.
pub const FIT_ERROR: &str = "fit_error";
/// Row flag for a prediction that failed and was replaced by the uncalibrated input.
pub const PREDICT_ERROR: &str = "predict_error";
/// Row flag for an experiment file that could not be loaded; its values are NaN.
pub const LOAD_ERROR: &str = "load_error";
pub const METRIC_ERROR: &str = "metric_error";

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub benchmark: String,
    /// Calibrator names; empty or `["all"]` selects the full catalog of each task.
    pub calibrators: Vec<String>,
    pub data_dir: PathBuf,
    /// Results CSV path.
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: usize,
    pub metrics: Vec<MetricId>,
    /// Record wall-clock fit and predict times; when off both columns are 0.
    pub timings: bool,
}

impl RunConfig {
    pub fn benchmark_dir(&self) -> PathBuf {
        self.data_dir.join(&self.benchmark)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub experiments: usize,
    pub rows: usize,
    /// Rows carrying a fit or predict fallback flag.
    pub fallbacks: usize,
    /// Experiments whose file could not be loaded.
    pub unloadable: usize,
}

fn wants_all(names: &[String]) -> bool {
    names.is_empty() || names.iter().any(|n| n.eq_ignore_ascii_case("all"))
}

/// Calibrators to run on a task, Base-model first, without duplicates.
pub fn resolve_calibrators(names: &[String], task: Task) -> Result<Vec<CalibratorKind>, CliError> {
    let kinds = if wants_all(names) {
        CalibratorKind::catalog(task)
    } else {
        let mut kinds = vec![CalibratorKind::Identity];
        for name in names {
            let kind = CalibratorKind::resolve(name, task).map_err(|e| CliError::Usage(e.to_string()))?;
            kinds.push(kind);
        }
        kinds
    };
    let mut seen = BTreeSet::new();
    Ok(kinds.into_iter().filter(|k| seen.insert(k.name())).collect())
}

/// Per-experiment seed, independent of scheduling.
pub fn experiment_seed(seed: u64, experiment_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in experiment_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

fn millis(start: Instant, timings: bool) -> f64 {
    if timings {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

struct Scored {
    calibrator: String,
    report: Option<MetricReport>,
    flags: Vec<String>,
    fit_ms: f64,
    predict_ms: f64,
}

fn score_one(
    e: &Experiment,
    kind: CalibratorKind,
    seed: u64,
    metrics: &[MetricId],
    timings: bool,
) -> Scored {
    let mut flags = Vec::new();
    let mut cal = Calibrator::new(kind, seed);
    let start = Instant::now();
    let fitted = cal.fit(&e.p_cal, e.y_cal.as_slice()).is_ok();
    let fit_ms = millis(start, timings);
    let start = Instant::now();
    let after: ProbabilityMatrix = if fitted {
        flags.extend(cal.flags().iter().map(|f| f.to_string()));
        match cal.predict_proba_flagged(&e.p_test) {
            Ok((p, extra)) => {
                flags.extend(extra.iter().map(|f| f.to_string()));
                p
            }
            Err(_) => {
                flags.push(PREDICT_ERROR.into());
                e.p_test.clone()
            }
        }
    } else {
        flags.push(FIT_ERROR.into());
        e.p_test.clone()
    };
    let predict_ms = millis(start, timings);
    let report = MetricReport::compute(&e.id, &kind.name(), metrics, &e.p_test, &after, &e.y_test).ok();
    if report.is_none() {
        flags.push(METRIC_ERROR.into());
    }
    let mut seen = BTreeSet::new();
    flags.retain(|f| seen.insert(f.clone()));
    Scored { calibrator: kind.name(), report, flags, fit_ms, predict_ms }
}

fn rows_for(
    benchmark: &str,
    row: &ManifestRow,
    task: Task,
    scored: Vec<Scored>,
    metrics: &[MetricId],
) -> Vec<ResultRow> {
    let mut out = Vec::new();
    for s in scored {
        for &metric in metrics.iter().filter(|m| m.applies_to(task)) {
            let value = s.report.as_ref().and_then(|r| r.get(metric));
            out.push(ResultRow {
                benchmark: benchmark.to_owned(),
                experiment_id: row.experiment_id.clone(),
                calibrator: s.calibrator.clone(),
                metric: metric.name().to_owned(),
                value_before: value.map_or(f64::NAN, |v| v.value_before),
                value_after: value.map_or(f64::NAN, |v| v.value_after),
                phi: value.map_or(f64::NAN, |v| v.phi),
                fit_ms: s.fit_ms,
                predict_ms: s.predict_ms,
                flags: s.flags.clone(),
            });
        }
    }
    out
}

fn run_experiment(cfg: &RunConfig, base: &Path, row: &ManifestRow, kinds: &[CalibratorKind]) -> (Vec<ResultRow>, bool) {
    let task = row.task().expect("validated by load_manifest");
    match load_experiment(row, base) {
        Ok(e) => {
            let seed = experiment_seed(cfg.seed, &e.id);
            let scored = kinds
                .iter()
                .map(|&kind| score_one(&e, kind, seed, &cfg.metrics, cfg.timings))
                .collect();
            (rows_for(&cfg.benchmark, row, task, scored, &cfg.metrics), true)
        }
        Err(_) => {
            let scored = kinds
                .iter()
                .map(|k| Scored {
                    calibrator: k.name(),
                    report: None,
                    flags: vec![LOAD_ERROR.into()],
                    fit_ms: 0.0,
                    predict_ms: 0.0,
                })
                .collect();
            (rows_for(&cfg.benchmark, row, task, scored, &cfg.metrics), false)
        }
    }
}

/// Runs the benchmark and writes the results CSV, sorted by experiment then calibrator.
pub fn run_rows(cfg: &RunConfig) -> Result<(Vec<ResultRow>, RunSummary), CliError> {
    if cfg.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    if cfg.metrics.is_empty() {
        return Err(CliError::Usage("no metrics selected".into()));
    }
    let base = cfg.benchmark_dir();
    let manifest = load_manifest(&base.join(MANIFEST_FILE), false)?;
    let mut per_task = Vec::new();
    for row in &manifest {
        let task = row.task()?;
        if !per_task.iter().any(|(t, _)| *t == task) {
            per_task.push((task, resolve_calibrators(&cfg.calibrators, task)?));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let results: Vec<(Vec<ResultRow>, bool)> = pool.install(|| {
        manifest
            .par_iter()
            .map(|row| {
                let task = row.task().expect("validated by load_manifest");
                let kinds = &per_task.iter().find(|(t, _)| *t == task).expect("resolved above").1;
                run_experiment(cfg, &base, row, kinds)
            })
            .collect()
    });
    let unloadable = results.iter().filter(|(_, ok)| !ok).count();
    let mut rows: Vec<ResultRow> = results.into_iter().flat_map(|(r, _)| r).collect();
    rows.sort_by(|a, b| (&a.experiment_id, &a.calibrator).cmp(&(&b.experiment_id, &b.calibrator)));
    let fallbacks = rows
        .iter()
        .filter(|r| r.flags.iter().any(|f| f == FIT_ERROR || f == PREDICT_ERROR))
        .count();
    let summary = RunSummary { experiments: manifest.len(), rows: rows.len(), fallbacks, unloadable };
    Ok((rows, summary))
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let (rows, summary) = run_rows(cfg)?;
    if let Some(parent) = cfg.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_results(&rows, &cfg.out)?;
    Ok(summary)
}
