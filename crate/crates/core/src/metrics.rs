//! Proper scores, binned calibration error, the Kuiper statistic and Post-Hoc
//! Improvement (Φ), the oriented before/after difference of any metric.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::prob::{argmax, LabelVector, ProbabilityMatrix, Task};
use crate::scalar::Scalar;

/// Clip floor for the logloss.
pub const LOGLOSS_EPS: f64 = 1e-15;

/// Number of equal-width bins of the reported ECE.
pub const ECE_BINS: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("mode error: {0}")]
    Mode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    LowerBetter,
    HigherBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricId {
    Brier,
    Logloss,
    Accuracy,
    Ece15,
    TopLabelEce15,
    Kuiper,
}

impl MetricId {
    pub const ALL: [MetricId; 6] = [
        MetricId::Brier,
        MetricId::Logloss,
        MetricId::Accuracy,
        MetricId::Ece15,
        MetricId::TopLabelEce15,
        MetricId::Kuiper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Brier => "brier",
            MetricId::Logloss => "logloss",
            MetricId::Accuracy => "accuracy",
            MetricId::Ece15 => "ece15",
            MetricId::TopLabelEce15 => "top_label_ece15",
            MetricId::Kuiper => "kuiper",
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            MetricId::Accuracy => Orientation::HigherBetter,
            _ => Orientation::LowerBetter,
        }
    }

    /// Positive-class ECE and Kuiper are only defined for binary experiments.
    pub fn applies_to(self, task: Task) -> bool {
        match self {
            MetricId::Ece15 | MetricId::Kuiper => task == Task::Binary,
            _ => true,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

fn check_shapes<T: Scalar>(p: &ProbabilityMatrix<T>, y: &LabelVector) -> Result<(), MetricError> {
    if p.n() != y.len() {
        return Err(MetricError::Shape(format!("{} rows but {} labels", p.n(), y.len())));
    }
    y.check_classes(p.k()).map_err(|e| MetricError::Shape(e.to_string()))
}

/// Mean squared distance between the probability vector and the one-hot label.
pub fn brier<T: Scalar>(p: &ProbabilityMatrix<T>, y: &LabelVector) -> Result<T, MetricError> {
    check_shapes(p, y)?;
    let mut total = T::zero();
    for (i, &label) in y.as_slice().iter().enumerate() {
        for (k, &v) in p.row(i).iter().enumerate() {
            let target = if k == label as usize { T::one() } else { T::zero() };
            total = total + (v - target) * (v - target);
        }
    }
    Ok(total / T::lit(p.n() as f64))
}

pub fn logloss<T: Scalar>(
    p: &ProbabilityMatrix<T>,
    y: &LabelVector,
    eps: T,
) -> Result<T, MetricError> {
    check_shapes(p, y)?;
    let eps = eps.max(T::min_positive_value());
    let total = y
        .as_slice()
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &label)| {
            acc - p.row(i)[label as usize].max(eps).min(T::one()).ln()
        });
    Ok(total / T::lit(p.n() as f64))
}

pub fn accuracy<T: Scalar>(p: &ProbabilityMatrix<T>, y: &LabelVector) -> Result<T, MetricError> {
    check_shapes(p, y)?;
    let hits = p
        .argmax()
        .iter()
        .zip(y.as_slice())
        .filter(|(&a, &l)| a == l as usize)
        .count();
    Ok(T::lit(hits as f64 / p.n() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EceMode {
    PositiveClass,
    TopLabel,
}

/// Equal-width binned ECE; the last bin is closed on the right and empty bins contribute 0.
pub fn ece_binned<T: Scalar>(
    p: &ProbabilityMatrix<T>,
    y: &LabelVector,
    n_bins: usize,
    mode: EceMode,
) -> Result<T, MetricError> {
    check_shapes(p, y)?;
    if mode == EceMode::PositiveClass && p.k() != 2 {
        return Err(MetricError::Mode(format!(
            "positive-class ECE needs 2 classes, got {}",
            p.k()
        )));
    }
    if n_bins == 0 {
        return Err(MetricError::Mode("need at least one bin".into()));
    }
    let mut conf_sum = vec![T::zero(); n_bins];
    let mut acc_sum = vec![T::zero(); n_bins];
    let mut count = vec![0usize; n_bins];
    for (i, &label) in y.as_slice().iter().enumerate() {
        let row = p.row(i);
        let (conf, hit) = match mode {
            EceMode::PositiveClass => (row[1], label == 1),
            EceMode::TopLabel => {
                let top = argmax(row.iter().copied());
                (row[top], top == label as usize)
            }
        };
        let b = ((conf.as_f64() * n_bins as f64).floor() as usize).min(n_bins - 1);
        conf_sum[b] = conf_sum[b] + conf;
        if hit {
            acc_sum[b] = acc_sum[b] + T::one();
        }
        count[b] += 1;
    }
    let n = T::lit(p.n() as f64);
    let mut ece = T::zero();
    for b in 0..n_bins {
        if count[b] > 0 {
            let c = T::lit(count[b] as f64);
            ece = ece + (c / n) * (conf_sum[b] / c - acc_sum[b] / c).abs();
        }
    }
    Ok(ece)
}

/// Kuiper statistic of the cumulative calibration residuals.
///
/// Samples are stably sorted by `p_pos`; with `C_i = (1/n)·Σ_{j≤i}(y_j − p_j)` the
/// score is `max(0, max C) + max(0, −min C)`.
pub fn kuiper<T: Scalar>(p_pos: &[T], y: &[u32]) -> Result<T, MetricError> {
    if p_pos.len() != y.len() || p_pos.is_empty() {
        return Err(MetricError::Shape(format!(
            "{} probabilities but {} labels",
            p_pos.len(),
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&l| l > 1) {
        return Err(MetricError::Shape(format!("non-binary label {bad}")));
    }
    let mut order: Vec<usize> = (0..p_pos.len()).collect();
    order.sort_by(|&a, &b| p_pos[a].partial_cmp(&p_pos[b]).expect("finite probabilities"));
    let n = T::lit(p_pos.len() as f64);
    let (mut cum, mut hi, mut lo) = (T::zero(), T::zero(), T::zero());
    for i in order {
        cum = cum + (T::lit(y[i] as f64) - p_pos[i]);
        let c = cum / n;
        hi = hi.max(c);
        lo = lo.min(c);
    }
    Ok(hi - lo)
}

/// Positively oriented difference: positive values mean the calibrator improved the metric.
pub fn phi(metric: MetricId, value_before: f64, value_after: f64) -> f64 {
    match metric.orientation() {
        Orientation::LowerBetter => value_before - value_after,
        Orientation::HigherBetter => value_after - value_before,
    }
}

/// Computes one metric with its default settings.
pub fn evaluate<T: Scalar>(
    metric: MetricId,
    p: &ProbabilityMatrix<T>,
    y: &LabelVector,
) -> Result<f64, MetricError> {
    let v = match metric {
        MetricId::Brier => brier(p, y)?,
        MetricId::Logloss => logloss(p, y, T::lit(LOGLOSS_EPS))?,
        MetricId::Accuracy => accuracy(p, y)?,
        MetricId::Ece15 => ece_binned(p, y, ECE_BINS, EceMode::PositiveClass)?,
        MetricId::TopLabelEce15 => ece_binned(p, y, ECE_BINS, EceMode::TopLabel)?,
        MetricId::Kuiper => {
            if p.k() != 2 {
                return Err(MetricError::Mode("kuiper needs 2 classes".into()));
            }
            check_shapes(p, y)?;
            kuiper(&p.positive(), y.as_slice())?
        }
    };
    Ok(v.as_f64())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub metric: MetricId,
    pub value_before: f64,
    pub value_after: f64,
    pub phi: f64,
}

/// Per-experiment before/after values and Φ for every applicable metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub experiment_id: String,
    pub calibrator: String,
    pub values: Vec<MetricValue>,
    pub fit_ms: f64,
    pub predict_ms: f64,
}

impl MetricReport {
    /// Scores `before` and `after` on `y` for each metric in `metrics` that applies to the task.
    pub fn compute<T: Scalar>(
        experiment_id: &str,
        calibrator: &str,
        metrics: &[MetricId],
        before: &ProbabilityMatrix<T>,
        after: &ProbabilityMatrix<T>,
        y: &LabelVector,
    ) -> Result<Self, MetricError> {
        let task = Task::for_classes(before.k());
        let mut values = Vec::new();
        for &metric in metrics.iter().filter(|m| m.applies_to(task)) {
            let value_before = evaluate(metric, before, y)?;
            let value_after = evaluate(metric, after, y)?;
            values.push(MetricValue {
                metric,
                value_before,
                value_after,
                phi: phi(metric, value_before, value_after),
            });
        }
        Ok(Self {
            experiment_id: experiment_id.to_owned(),
            calibrator: calibrator.to_owned(),
            values,
            fit_ms: 0.0,
            predict_ms: 0.0,
        })
    }

    pub fn get(&self, metric: MetricId) -> Option<&MetricValue> {
        self.values.iter().find(|v| v.metric == metric)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pm(rows: &[Vec<f64>]) -> ProbabilityMatrix {
        ProbabilityMatrix::from_rows(rows).unwrap()
    }

    fn labels(v: &[u32]) -> LabelVector {
        LabelVector::new(v.to_vec())
    }

    #[test]
    fn brier_examples() {
        let p = pm(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(brier(&p, &labels(&[0, 1])).unwrap(), 0.0);
        assert_eq!(brier(&pm(&[vec![0.5, 0.5]]), &labels(&[0])).unwrap(), 0.5);
        let b = brier(&pm(&[vec![0.5, 0.3, 0.2]]), &labels(&[1])).unwrap();
        assert!((b - 0.78).abs() < 1e-12);
        assert!(matches!(brier(&p, &labels(&[0])), Err(MetricError::Shape(_))));
    }

    #[test]
    fn binary_brier_is_twice_squared_error() {
        let b = brier(&pm(&[vec![0.3, 0.7]]), &labels(&[0])).unwrap();
        assert!((b - 2.0 * 0.7f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn logloss_examples() {
        let p = pm(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(logloss(&p, &labels(&[0, 1]), LOGLOSS_EPS).unwrap(), 0.0);
        let half = pm(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!((logloss(&half, &labels(&[0, 1]), LOGLOSS_EPS).unwrap() - 2f64.ln()).abs() < 1e-15);
        let wrong = logloss(&pm(&[vec![1.0, 0.0]]), &labels(&[1]), LOGLOSS_EPS).unwrap();
        assert!((wrong + 1e-15f64.ln()).abs() < 1e-12);
        assert!((wrong - 34.539).abs() < 1e-3);
    }

    #[test]
    fn accuracy_examples() {
        let p = pm(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(accuracy(&p, &labels(&[0, 1])).unwrap(), 1.0);
        assert_eq!(accuracy(&pm(&[vec![0.5, 0.5]]), &labels(&[1])).unwrap(), 0.0);
        let p = pm(&[vec![0.6, 0.4], vec![0.3, 0.7]]);
        assert_eq!(accuracy(&p, &labels(&[0, 0])).unwrap(), 0.5);
    }

    #[test]
    fn ece_examples() {
        let rows = vec![vec![0.3, 0.7]; 10];
        let y: Vec<u32> = (0..10).map(|i| u32::from(i < 7)).collect();
        let e = ece_binned(&pm(&rows), &labels(&y), 15, EceMode::PositiveClass).unwrap();
        assert!(e.abs() < 1e-12);

        let rows = vec![vec![0.1, 0.9]; 10];
        let y: Vec<u32> = (0..10).map(|i| u32::from(i < 5)).collect();
        let e = ece_binned(&pm(&rows), &labels(&y), 15, EceMode::PositiveClass).unwrap();
        assert!((e - 0.4).abs() < 1e-12);

        let rows = vec![vec![0.5, 0.3, 0.2]; 6];
        let e = ece_binned(&pm(&rows), &labels(&[0; 6]), 15, EceMode::TopLabel).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
        assert!(matches!(
            ece_binned(&pm(&rows), &labels(&[0; 6]), 15, EceMode::PositiveClass),
            Err(MetricError::Mode(_))
        ));
    }

    #[test]
    fn ece_last_bin_is_right_closed() {
        let e = ece_binned(&pm(&[vec![0.0, 1.0]]), &labels(&[1]), 15, EceMode::PositiveClass).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn ece_zero_on_bin_calibrated_fixture() {
        // Bins at 0.2 (1 of 5 positive) and 0.8 (4 of 5 positive).
        let mut rows = vec![vec![0.8, 0.2]; 5];
        rows.extend(vec![vec![0.2, 0.8]; 5]);
        let y = [1, 0, 0, 0, 0, 1, 1, 1, 1, 0];
        let e = ece_binned(&pm(&rows), &labels(&y), 15, EceMode::PositiveClass).unwrap();
        assert!(e.abs() < 1e-12);
    }

    #[test]
    fn kuiper_examples() {
        assert_eq!(kuiper(&[0.0, 1.0, 1.0], &[0, 1, 1]).unwrap(), 0.0);
        assert!((kuiper(&[0.5f64, 0.5], &[1, 1]).unwrap() - 0.5).abs() < 1e-15);
        assert!((kuiper(&[0.5f64, 0.5], &[0, 1]).unwrap() - 0.25).abs() < 1e-15);
        assert!(kuiper(&[0.5], &[0, 1]).is_err());
    }

    #[test]
    fn phi_examples() {
        assert!((phi(MetricId::Brier, 0.25, 0.20) - 0.05).abs() < 1e-15);
        for m in MetricId::ALL {
            assert_eq!(phi(m, 0.3, 0.3), 0.0);
        }
        assert!((phi(MetricId::Accuracy, 0.9, 0.88) + 0.02).abs() < 1e-15);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in MetricId::ALL {
            assert_eq!(m.name().parse::<MetricId>().unwrap(), m);
        }
        assert!("ece".parse::<MetricId>().is_err());
    }

    #[test]
    fn proper_scores_minimized_at_class_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(3..12);
            let y: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let freq = y.iter().sum::<u32>() as f64 / n as f64;
            let y = labels(&y);
            let score = |q: f64, metric: MetricId| {
                let p = pm(&vec![vec![1.0 - q, q]; n]);
                evaluate(metric, &p, &y).unwrap()
            };
            for metric in [MetricId::Brier, MetricId::Logloss] {
                let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
                let best = grid
                    .iter()
                    .copied()
                    .min_by(|a, b| score(*a, metric).partial_cmp(&score(*b, metric)).unwrap())
                    .unwrap();
                assert!((best - freq).abs() <= 1e-3 + 1e-12, "{metric}: {best} vs {freq}");
            }
        }
    }

    #[test]
    fn report_skips_binary_only_metrics_for_multiclass() {
        let p = pm(&[vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2]]);
        let r = MetricReport::compute("e", "c", &MetricId::ALL, &p, &p, &labels(&[2, 0])).unwrap();
        assert_eq!(r.values.len(), 4);
        assert!(r.get(MetricId::Kuiper).is_none());
        assert!(r.values.iter().all(|v| v.phi == 0.0));
    }

    #[test]
    fn f32_metrics() {
        let p = ProbabilityMatrix::<f32>::from_rows(&[vec![0.5, 0.3, 0.2]]).unwrap();
        assert!((brier(&p, &labels(&[1])).unwrap() - 0.78).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Reordering the input while keeping the relative order of equal-p samples
            // leaves the stably sorted sequence, hence the statistic, unchanged.
            #[test]
            fn kuiper_depends_only_on_stable_order(
                raw in prop::collection::vec((0u8..4, 0u32..2), 1..30),
                seed in 0u64..1000,
            ) {
                let p: Vec<f64> = raw.iter().map(|(b, _)| f64::from(*b) / 4.0 + 0.1).collect();
                let y: Vec<u32> = raw.iter().map(|(_, l)| *l).collect();
                let base = kuiper(&p, &y).unwrap();
                // Interleave the per-value subsequences in a random order.
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut queues: Vec<Vec<(f64, u32)>> = vec![Vec::new(); 4];
                for (i, (b, _)) in raw.iter().enumerate() {
                    queues[*b as usize].push((p[i], y[i]));
                }
                for q in &mut queues { q.reverse(); }
                let (mut p2, mut y2) = (Vec::new(), Vec::new());
                while queues.iter().any(|q| !q.is_empty()) {
                    let j = rng.random_range(0..4);
                    if let Some((pv, l)) = queues[j].pop() { p2.push(pv); y2.push(l); }
                }
                prop_assert_eq!(kuiper(&p2, &y2).unwrap(), base);
            }
        }
    }
}
