//! Histogram binning, Bayesian binning into quantiles, and scaling-binning.

use super::logistic::fit_logistic_family;
use super::{
    check_inputs, mean_label, BinaryCalibrator, BinaryError, BinaryMap, BinaryMethod,
    LogisticVariant,
};
use crate::special::ln_factorials;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinStrategy {
    Uniform,
    Quantile,
}

/// Partition of `[0, 1]` into `M` bins with one value per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinBoundaries {
    /// `M + 1` ascending edges from 0 to 1.
    pub edges: Vec<f64>,
    pub theta: Vec<f64>,
}

impl BinBoundaries {
    pub fn n_bins(&self) -> usize {
        self.theta.len()
    }

    /// Bins are `[e_m, e_{m+1})`, the last one closed at 1.
    pub fn bin_of(&self, p: f64) -> usize {
        let interior = &self.edges[1..self.edges.len() - 1];
        interior.partition_point(|&e| e <= p)
    }

    pub fn eval(&self, p: f64) -> f64 {
        self.theta[self.bin_of(p)]
    }

    fn with_edges(edges: Vec<f64>, p: &[f64], y: &[u32]) -> Self {
        let m = edges.len() - 1;
        let mut bins = Self { edges, theta: vec![0.0; m] };
        let mut sums = vec![0.0; m];
        let mut counts = vec![0usize; m];
        for (&pi, &yi) in p.iter().zip(y) {
            let b = bins.bin_of(pi);
            sums[b] += f64::from(yi);
            counts[b] += 1;
        }
        let prior = mean_label(y);
        bins.theta = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { prior })
            .collect();
        bins
    }

    fn counts(&self, p: &[f64], y: &[u32]) -> Vec<(usize, usize)> {
        let mut out = vec![(0usize, 0usize); self.n_bins()];
        for (&pi, &yi) in p.iter().zip(y) {
            let b = self.bin_of(pi);
            out[b].0 += 1;
            out[b].1 += yi as usize;
        }
        out
    }
}

pub(crate) fn uniform_edges(m: usize) -> Vec<f64> {
    (0..=m).map(|k| k as f64 / m as f64).collect()
}

/// Equal-mass edges taken at sample values; duplicates and edges at or below
/// the smallest sample are dropped, so `M' ≤ min(M, distinct values)`.
pub(crate) fn quantile_edges(p: &[f64], m: usize) -> Vec<f64> {
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite probabilities"));
    let n = sorted.len();
    let mut edges = vec![0.0];
    for k in 1..m {
        let e = sorted[(k * n / m).min(n - 1)];
        if e > sorted[0] && e < 1.0 && e > *edges.last().unwrap() {
            edges.push(e);
        }
    }
    edges.push(1.0);
    edges
}

pub(crate) fn histogram(strategy: BinStrategy, m: usize, p: &[f64], y: &[u32]) -> BinBoundaries {
    let edges = match strategy {
        BinStrategy::Uniform => uniform_edges(m),
        BinStrategy::Quantile => quantile_edges(p, m),
    };
    BinBoundaries::with_edges(edges, p, y)
}

/// Histogram binning with empty bins set to the global positive rate.
pub fn fit_histogram(
    strategy: BinStrategy,
    m: usize,
    p_cal: &[f64],
    y_cal: &[u32],
) -> Result<BinaryCalibrator, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    if m == 0 {
        return Err(BinaryError::Shape("need at least one bin".into()));
    }
    let method = match strategy {
        BinStrategy::Uniform => BinaryMethod::HistUniform,
        BinStrategy::Quantile => BinaryMethod::HistQuantile,
    };
    let bins = histogram(strategy, m, p_cal, y_cal);
    let monotone = bins.theta.windows(2).all(|w| w[0] <= w[1]);
    let mut c = BinaryCalibrator::new(method, BinaryMap::Histogram(bins), monotone);
    if !monotone {
        c = c.with_flag(super::FitFlag::NonMonotone);
    }
    Ok(c)
}

/// Posterior-weighted average of equal-mass histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct BbqModel {
    pub models: Vec<(f64, BinBoundaries)>,
}

impl BbqModel {
    pub fn eval(&self, p: f64) -> f64 {
        self.models.iter().map(|(w, bins)| w * bins.eval(p)).sum()
    }

    /// Normalizes log evidences (uniform model prior) into posterior weights.
    pub fn from_log_evidence(candidates: Vec<(f64, BinBoundaries)>) -> Self {
        let max = candidates.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = candidates.iter().map(|c| (c.0 - max).exp()).sum();
        let models = candidates
            .into_iter()
            .map(|(le, bins)| ((le - max).exp() / total, bins))
            .collect();
        Self { models }
    }
}

/// Spread constant of the candidate bin counts around `n^{1/3}`.
pub const BBQ_SPREAD: f64 = 3.0;

pub(crate) fn bbq_bin_counts(n: usize) -> std::ops::RangeInclusive<usize> {
    let root = (n as f64).cbrt();
    let lo = ((root / BBQ_SPREAD).ceil() as usize).max(1);
    let hi = ((root * BBQ_SPREAD).ceil() as usize).max(lo + 1);
    lo..=hi
}

/// Bayesian binning into quantiles with a uniform Beta(1, 1) prior per bin.
pub fn fit_bbq(p_cal: &[f64], y_cal: &[u32]) -> Result<BinaryCalibrator, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    let n = p_cal.len();
    let ln_fact = ln_factorials(n + 1);
    let mut candidates: Vec<(f64, BinBoundaries)> = Vec::new();
    for b in bbq_bin_counts(n) {
        let bins = histogram(BinStrategy::Quantile, b, p_cal, y_cal);
        if candidates.iter().any(|(_, c)| c.edges == bins.edges) {
            continue;
        }
        // Beta-binomial evidence with α = β = 1: k!(n−k)!/(n+1)! per bin.
        let log_evidence: f64 = bins
            .counts(p_cal, y_cal)
            .iter()
            .map(|&(nb, k)| ln_fact[k] + ln_fact[nb - k] - ln_fact[nb + 1])
            .sum();
        candidates.push((log_evidence, bins));
    }
    let model = BbqModel::from_log_evidence(candidates);
    Ok(BinaryCalibrator::new(BinaryMethod::Bbq, BinaryMap::Bbq(model), false))
}

/// Platt-logits scaling followed by a ten-bin quantile histogram of the scaled values.
pub fn fit_scaling_binning(p_cal: &[f64], y_cal: &[u32]) -> Result<BinaryCalibrator, BinaryError> {
    let platt = fit_logistic_family(LogisticVariant::PlattLogits, p_cal, y_cal)?;
    let scaled: Vec<f64> = platt.apply(p_cal);
    let bins = histogram(BinStrategy::Quantile, 10, &scaled, y_cal);
    let monotone = platt.monotone && bins.theta.windows(2).all(|w| w[0] <= w[1]);
    let map = BinaryMap::ScalingBinning { scaling: Box::new(platt.map), bins };
    let mut c = BinaryCalibrator::new(BinaryMethod::ScalingBinning, map, monotone);
    for f in platt.flags {
        c = c.with_flag(f);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::super::tests::sample;
    use super::*;
    use statrs::function::gamma::ln_gamma;

    #[test]
    fn uniform_example() {
        let c = fit_histogram(BinStrategy::Uniform, 2, &[0.1, 0.2, 0.7, 0.9], &[0, 1, 1, 1]).unwrap();
        let BinaryMap::Histogram(bins) = &c.map else { unreachable!() };
        assert_eq!(bins.theta, vec![0.5, 1.0]);
        assert_eq!(c.apply_one(0.3), 0.5);
        assert_eq!(c.apply_one(1.0), 1.0);
    }

    #[test]
    fn empty_bin_takes_prior() {
        let c = fit_histogram(BinStrategy::Uniform, 2, &[0.1, 0.2, 0.3, 0.4], &[1, 0, 0, 0]).unwrap();
        let BinaryMap::Histogram(bins) = &c.map else { unreachable!() };
        assert_eq!(bins.theta[1], 0.25);
    }

    #[test]
    fn quantile_merges_duplicate_edges() {
        let p: Vec<f64> = (0..40).map(|i| [0.1, 0.3, 0.5, 0.7, 0.9][i % 5]).collect();
        let y: Vec<u32> = (0..40).map(|i| (i % 3 == 0) as u32).collect();
        let c = fit_histogram(BinStrategy::Quantile, 10, &p, &y).unwrap();
        let BinaryMap::Histogram(bins) = &c.map else { unreachable!() };
        assert!(bins.n_bins() <= 5, "{:?}", bins.edges);
        assert!(bins.edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!((bins.edges[0], *bins.edges.last().unwrap()), (0.0, 1.0));
    }

    #[test]
    fn quantile_bins_have_equal_mass() {
        let p: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let y = vec![0; 100];
        let bins = histogram(BinStrategy::Quantile, 10, &p, &y);
        assert_eq!(bins.n_bins(), 10);
        assert!(bins.counts(&p, &y).iter().all(|&(nb, _)| nb == 10));
    }

    #[test]
    fn histogram_outputs_come_from_theta() {
        let (p, y) = sample(200, 3, 1.0);
        let c = fit_histogram(BinStrategy::Quantile, 10, &p, &y).unwrap();
        let BinaryMap::Histogram(bins) = &c.map else { unreachable!() };
        for v in c.apply(&super::super::unit_grid()) {
            assert!(bins.theta.contains(&v));
        }
    }

    #[test]
    fn bbq_collapses_to_single_histogram() {
        let p = vec![0.4; 12];
        let y: Vec<u32> = (0..12).map(|i| (i < 5) as u32).collect();
        let c = fit_bbq(&p, &y).unwrap();
        let BinaryMap::Bbq(model) = &c.map else { unreachable!() };
        assert_eq!(model.models.len(), 1);
        assert_eq!(model.models[0].0, 1.0);
        assert!((c.apply_one(0.9) - 5.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn bbq_equal_evidence_averages() {
        let a = BinBoundaries { edges: vec![0.0, 1.0], theta: vec![0.2] };
        let b = BinBoundaries { edges: vec![0.0, 0.5, 1.0], theta: vec![0.1, 0.9] };
        let model = BbqModel::from_log_evidence(vec![(-3.0, a), (-3.0, b)]);
        assert!((model.eval(0.7) - 0.55).abs() < 1e-15);
        assert!((model.eval(0.2) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn bbq_candidate_range() {
        assert_eq!(bbq_bin_counts(50), 2..=12);
        assert!(bbq_bin_counts(2).count() >= 2);
    }

    /// Independent evidence-weighted average: bins assigned by linear scan,
    /// evidence from the Beta function via statrs.
    fn bbq_oracle(p: &[f64], y: &[u32], x: f64) -> f64 {
        let n = p.len();
        let root = (n as f64).cbrt();
        let (lo, hi) = ((root / 3.0).ceil() as usize, (root * 3.0).ceil() as usize);
        let mut seen: Vec<Vec<f64>> = Vec::new();
        let mut terms = Vec::new();
        for b in lo..=hi {
            let edges = quantile_edges(p, b);
            if seen.contains(&edges) {
                continue;
            }
            seen.push(edges.clone());
            let m = edges.len() - 1;
            let find = |v: f64| (0..m).find(|&j| v < edges[j + 1] || j == m - 1).unwrap();
            let mut nb = vec![0.0; m];
            let mut kb = vec![0.0; m];
            for (&pi, &yi) in p.iter().zip(y) {
                nb[find(pi)] += 1.0;
                kb[find(pi)] += f64::from(yi);
            }
            let ln_b = |a: f64, b: f64| ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
            let le: f64 = (0..m).map(|j| ln_b(1.0 + kb[j], 1.0 + nb[j] - kb[j]) - ln_b(1.0, 1.0)).sum();
            let prior = y.iter().sum::<u32>() as f64 / n as f64;
            let j = find(x);
            let theta = if nb[j] > 0.0 { kb[j] / nb[j] } else { prior };
            terms.push((le, theta));
        }
        let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = terms.iter().map(|t| (t.0 - max).exp()).sum();
        terms.iter().map(|t| (t.0 - max).exp() / z * t.1).sum()
    }

    #[test]
    fn bbq_matches_brute_force_oracle() {
        for seed in 0..5 {
            let (p, y) = sample(50, 100 + seed, 1.4);
            let c = fit_bbq(&p, &y).unwrap();
            for x in super::super::unit_grid().into_iter().step_by(25) {
                assert!((c.apply_one(x) - bbq_oracle(&p, &y, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_binning_is_composition() {
        let (p, y) = sample(200, 17, 1.9);
        let c = fit_scaling_binning(&p, &y).unwrap();
        let platt = fit_logistic_family(LogisticVariant::PlattLogits, &p, &y).unwrap();
        let scaled = platt.apply(&p);
        let hist = fit_histogram(BinStrategy::Quantile, 10, &scaled, &y).unwrap();
        let grid = super::super::unit_grid();
        let mut distinct: Vec<f64> = Vec::new();
        for &x in &grid {
            let v = c.apply_one(x);
            assert!((v - hist.apply_one(platt.apply_one(x))).abs() < 1e-12);
            if !distinct.contains(&v) {
                distinct.push(v);
            }
        }
        assert!(distinct.len() <= 10);
    }

    #[test]
    fn scaling_binning_single_bin() {
        let p = vec![0.3; 10];
        let y: Vec<u32> = (0..10).map(|i| (i < 3) as u32).collect();
        let c = fit_scaling_binning(&p, &y).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert!((c.apply_one(x) - 0.3).abs() < 1e-15);
        }
    }
}
