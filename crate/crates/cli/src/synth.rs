//! Synthetic benchmarks with a known miscalibration.
//!
//! True class probabilities are Dirichlet(1, …, 1) draws, labels are sampled from them and
//! the observed predictions are `softmax(ln q / t + b)` for a fixed temperature `t` and
//! per-class shift `b`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use calbench::io::{write_experiment, write_manifest, ManifestRow};
use calbench::{Experiment, LabelVector, ProbabilityMatrix, Task};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::{CliError, MANIFEST_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Miscalibration {
    /// No distortion; the predictions are the true probabilities.
    None,
    Overconfident,
    Underconfident,
    AffineShift,
}

impl Miscalibration {
    pub fn temperature(self) -> f64 {
        match self {
            Miscalibration::Overconfident => 0.5,
            Miscalibration::Underconfident => 2.0,
            Miscalibration::None | Miscalibration::AffineShift => 1.0,
        }
    }

    /// Per-class logit shift, spread evenly over `[-1, 1]`.
    pub fn shift(self, k: usize) -> Vec<f64> {
        match self {
            Miscalibration::AffineShift => {
                (0..k).map(|j| -1.0 + 2.0 * j as f64 / (k - 1) as f64).collect()
            }
            _ => vec![0.0; k],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Miscalibration::None => "none",
            Miscalibration::Overconfident => "overconfident",
            Miscalibration::Underconfident => "underconfident",
            Miscalibration::AffineShift => "affine_shift",
        }
    }
}

impl fmt::Display for Miscalibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Miscalibration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Miscalibration::None,
            Miscalibration::Overconfident,
            Miscalibration::Underconfident,
            Miscalibration::AffineShift,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown miscalibration `{s}`"))
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Benchmark directory; receives the manifest and one file per experiment.
    pub out: PathBuf,
    pub n_datasets: usize,
    pub models_per_dataset: usize,
    pub k: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub miscal: Miscalibration,
    pub seed: u64,
}

/// Draws `n` rows of true probabilities, labels and distorted predictions.
pub fn sample_split(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
    miscal: Miscalibration,
) -> (ProbabilityMatrix, LabelVector) {
    let t = miscal.temperature();
    let shift = miscal.shift(k);
    let mut data = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let q: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
        let total: f64 = q.iter().sum();
        let q: Vec<f64> = q.iter().map(|v| v / total).collect();
        let label = WeightedIndex::new(&q).expect("positive weights").sample(rng);
        labels.push(label as u32);
        let z: Vec<f64> = q.iter().zip(&shift).map(|(v, b)| v.ln() / t + b).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        data.extend(e.iter().map(|v| v / s));
    }
    let p = ProbabilityMatrix::from_shape_vec(n, k, data).expect("softmax rows are valid");
    (p, LabelVector::new(labels))
}

pub fn experiment_id(dataset: usize, model: usize) -> String {
    format!("d{dataset:03}_m{model:02}")
}

/// Writes a synthetic benchmark and returns its manifest rows.
pub fn cmd_synth(cfg: &SynthConfig) -> Result<Vec<ManifestRow>, CliError> {
    if cfg.n_datasets == 0 || cfg.models_per_dataset == 0 || cfg.n_cal == 0 || cfg.n_test == 0 {
        return Err(CliError::Usage("all counts must be at least 1".into()));
    }
    if cfg.k < 2 {
        return Err(CliError::Usage(format!("need at least 2 classes, got {}", cfg.k)));
    }
    std::fs::create_dir_all(&cfg.out)?;
    let task = Task::for_classes(cfg.k);
    let mut rows = Vec::new();
    for d in 0..cfg.n_datasets {
        for m in 0..cfg.models_per_dataset {
            let id = experiment_id(d, m);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((d * cfg.models_per_dataset + m) as u64);
            let (p_cal, y_cal) = sample_split(&mut rng, cfg.n_cal, cfg.k, cfg.miscal);
            let (p_test, y_test) = sample_split(&mut rng, cfg.n_test, cfg.k, cfg.miscal);
            let e = Experiment {
                id: id.clone(),
                dataset: format!("d{d:03}"),
                model: format!("m{m:02}"),
                task,
                p_cal,
                y_cal,
                p_test,
                y_test,
            };
            let file = format!("{id}.calb");
            write_experiment(&e, &cfg.out.join(&file))?;
            rows.push(ManifestRow {
                experiment_id: id,
                dataset: e.dataset,
                model: e.model,
                task: task.to_string(),
                path: file,
                n_cal: cfg.n_cal,
                n_test: cfg.n_test,
                k: cfg.k,
                config: format!("miscal={};seed={}", cfg.miscal, cfg.seed),
            });
        }
    }
    write_manifest(&rows, &cfg.out.join(MANIFEST_FILE))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_spans_unit_interval() {
        assert_eq!(Miscalibration::AffineShift.shift(3), vec![-1.0, 0.0, 1.0]);
        assert_eq!(Miscalibration::Overconfident.shift(2), vec![0.0, 0.0]);
        let b = Miscalibration::AffineShift.shift(10);
        assert_eq!(b.iter().fold(0.0f64, |a, v| a.max(v.abs())), 1.0);
    }

    #[test]
    fn undistorted_predictions_are_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, y) = sample_split(&mut rng, 40_000, 2, Miscalibration::None);
        let pos = p.positive();
        for (lo, hi) in [(0.0, 0.3), (0.3, 0.7), (0.7, 1.0)] {
            let idx: Vec<usize> = (0..pos.len()).filter(|&i| pos[i] >= lo && pos[i] < hi).collect();
            let mean_p = idx.iter().map(|&i| pos[i]).sum::<f64>() / idx.len() as f64;
            let freq = idx.iter().map(|&i| f64::from(y.as_slice()[i])).sum::<f64>() / idx.len() as f64;
            assert!((mean_p - freq).abs() < 0.02, "{lo}-{hi}: {mean_p} vs {freq}");
        }
    }

    #[test]
    fn overconfident_predictions_sharpen_the_truth() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let (truth, _) = sample_split(&mut a, 50, 3, Miscalibration::None);
        let (sharp, _) = sample_split(&mut b, 50, 3, Miscalibration::Overconfident);
        for i in 0..50 {
            let q = truth.row(i);
            let s: f64 = q.iter().map(|v| v * v).sum();
            for j in 0..3 {
                assert!((sharp.row(i)[j] - q[j] * q[j] / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_zero_counts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            out: dir.path().into(),
            n_datasets: 0,
            models_per_dataset: 1,
            k: 2,
            n_cal: 1,
            n_test: 1,
            miscal: Miscalibration::None,
            seed: 0,
        };
        assert!(matches!(cmd_synth(&cfg), Err(CliError::Usage(_))));
    }
}
