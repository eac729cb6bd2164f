//! Binary post-hoc calibrators behind one fit/apply contract.
//!
//! Every fitter takes positive-class probabilities and 0/1 labels and returns a
//! [`BinaryCalibrator`], a fitted map `[0, 1] → [0, 1]`. Single-class calibration
//! sets never fail: they produce a flagged constant map.

mod binning;
mod isotonic_maps;
mod kernel;
mod logistic;
mod spline_maps;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::isotonic::IsotonicFit;
use crate::optim::OptimError;

pub use binning::{fit_bbq, fit_histogram, fit_scaling_binning, BbqModel, BinBoundaries, BinStrategy};
pub use isotonic_maps::{fit_cir, fit_isotonic, venn_abers, venn_abers_bounds, VennAbers};
pub use kernel::{beta_kernel_bandwidth, fit_beta_kernel, BetaKernel, KERNEL_MAX_POINTS};
pub use logistic::{
    fit_beta_tied, fit_ets_binary, fit_logistic_family, fit_quadratic_without_curvature,
    EtsParams, LogisticFamilyParams, LogisticVariant,
};
pub(crate) use logistic::fit_simplex_weights;
pub use spline_maps::{fit_cdf_spline, fit_spline, CdfSplineMap, SplineMap, SPLINE_LAMBDAS};

/// Clip range of the constant map returned for single-class calibration sets.
pub const DEGENERATE_CLIP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BinaryError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    NonConvergence(#[from] OptimError),
}

/// Conditions recorded on a fit that still produced a usable map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FitFlag {
    /// Single-class calibration labels; the map is a clipped constant.
    DegenerateLabels,
    /// Too few samples for the method; a Platt-logits map was fitted instead.
    TooFewSamples,
    /// An empirical monotonicity check failed.
    NonMonotone,
    /// One-vs-rest outputs summed to zero on some row and were replaced by a uniform row.
    ZeroRowSum,
}

impl fmt::Display for FitFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitFlag::DegenerateLabels => "degenerate_labels",
            FitFlag::TooFewSamples => "too_few_samples",
            FitFlag::NonMonotone => "non_monotone",
            FitFlag::ZeroRowSum => "zero_row_sum",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryMethod {
    Temperature,
    Ets,
    PlattProbs,
    PlattLogits,
    Quadratic,
    Beta,
    HistUniform,
    HistQuantile,
    Bbq,
    Isotonic,
    Cir,
    VennAbers,
    Spline,
    CdfSpline,
    ScalingBinning,
    BetaKernel,
}

impl BinaryMethod {
    pub const ALL: [BinaryMethod; 16] = [
        BinaryMethod::Temperature,
        BinaryMethod::Ets,
        BinaryMethod::PlattProbs,
        BinaryMethod::PlattLogits,
        BinaryMethod::Quadratic,
        BinaryMethod::Beta,
        BinaryMethod::HistUniform,
        BinaryMethod::HistQuantile,
        BinaryMethod::Bbq,
        BinaryMethod::Isotonic,
        BinaryMethod::Cir,
        BinaryMethod::VennAbers,
        BinaryMethod::Spline,
        BinaryMethod::CdfSpline,
        BinaryMethod::ScalingBinning,
        BinaryMethod::BetaKernel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinaryMethod::Temperature => "TS",
            BinaryMethod::Ets => "ETS",
            BinaryMethod::PlattProbs => "Platt-probs",
            BinaryMethod::PlattLogits => "Platt-logits",
            BinaryMethod::Quadratic => "Quadratic",
            BinaryMethod::Beta => "Beta",
            BinaryMethod::HistUniform => "Hist-uniform",
            BinaryMethod::HistQuantile => "Hist-quantile",
            BinaryMethod::Bbq => "BBQ",
            BinaryMethod::Isotonic => "Isotonic",
            BinaryMethod::Cir => "CIR",
            BinaryMethod::VennAbers => "Venn-Abers",
            BinaryMethod::Spline => "Spline",
            BinaryMethod::CdfSpline => "CDF-Spline",
            BinaryMethod::ScalingBinning => "Scaling-Binning",
            BinaryMethod::BetaKernel => "Kernel",
        }
    }

    pub fn logistic_variant(self) -> Option<LogisticVariant> {
        match self {
            BinaryMethod::Temperature => Some(LogisticVariant::Temperature),
            BinaryMethod::PlattLogits => Some(LogisticVariant::PlattLogits),
            BinaryMethod::PlattProbs => Some(LogisticVariant::PlattProbs),
            BinaryMethod::Quadratic => Some(LogisticVariant::Quadratic),
            BinaryMethod::Beta => Some(LogisticVariant::Beta),
            _ => None,
        }
    }
}

impl fmt::Display for BinaryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BinaryMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BinaryMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown binary calibrator `{s}`"))
    }
}

/// Fitted parameters of each binary map.
#[derive(Debug, Clone, PartialEq)]
pub enum BinaryMap {
    Constant(f64),
    Logistic(LogisticFamilyParams),
    Ets(EtsParams),
    Histogram(BinBoundaries),
    Bbq(BbqModel),
    Isotonic(IsotonicFit<f64>),
    /// Block centers `(mean input, mean label)` of the isotonic fit.
    Cir(Vec<(f64, f64)>),
    VennAbers(VennAbers),
    Spline(SplineMap),
    CdfSpline(CdfSplineMap),
    ScalingBinning {
        scaling: Box<BinaryMap>,
        bins: BinBoundaries,
    },
    BetaKernel(BetaKernel),
}

impl BinaryMap {
    pub fn eval(&self, p: f64) -> f64 {
        let v = match self {
            BinaryMap::Constant(c) => *c,
            BinaryMap::Logistic(params) => params.eval(p),
            BinaryMap::Ets(params) => params.eval(p),
            BinaryMap::Histogram(bins) => bins.eval(p),
            BinaryMap::Bbq(model) => model.eval(p),
            BinaryMap::Isotonic(fit) => fit.step(p),
            BinaryMap::Cir(centers) => isotonic_maps::interpolate_centers(centers, p),
            BinaryMap::VennAbers(va) => va.predict(p),
            BinaryMap::Spline(map) => map.eval(p),
            BinaryMap::CdfSpline(map) => map.eval(p),
            BinaryMap::ScalingBinning { scaling, bins } => bins.eval(scaling.eval(p)),
            BinaryMap::BetaKernel(kernel) => kernel.eval(p),
        };
        v.clamp(0.0, 1.0)
    }
}

/// A fitted binary calibration map with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCalibrator {
    pub method: BinaryMethod,
    pub map: BinaryMap,
    /// Whether `p ≤ p′ ⇒ apply(p) ≤ apply(p′)` is guaranteed for this fit.
    pub monotone: bool,
    pub flags: Vec<FitFlag>,
}

impl BinaryCalibrator {
    pub(crate) fn new(method: BinaryMethod, map: BinaryMap, monotone: bool) -> Self {
        Self { method, map, monotone, flags: Vec::new() }
    }

    pub(crate) fn with_flag(mut self, flag: FitFlag) -> Self {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
        self
    }

    pub(crate) fn degenerate(method: BinaryMethod, y: &[u32]) -> Self {
        let c = mean_label(y).clamp(DEGENERATE_CLIP, 1.0 - DEGENERATE_CLIP);
        Self::new(method, BinaryMap::Constant(c), true).with_flag(FitFlag::DegenerateLabels)
    }

    pub fn apply_one(&self, p: f64) -> f64 {
        self.map.eval(p)
    }

    /// Elementwise evaluation of the fitted map.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        match &self.map {
            BinaryMap::VennAbers(va) => va.predict_many(p),
            map => p.iter().map(|&v| map.eval(v)).collect(),
        }
    }
}

pub(crate) fn mean_label(y: &[u32]) -> f64 {
    y.iter().map(|&l| f64::from(l)).sum::<f64>() / y.len().max(1) as f64
}

pub(crate) fn single_class(y: &[u32]) -> bool {
    y.iter().all(|&l| l == y[0])
}

pub(crate) fn check_inputs(p: &[f64], y: &[u32], min_n: usize) -> Result<(), BinaryError> {
    if p.len() != y.len() {
        return Err(BinaryError::Shape(format!("{} probabilities but {} labels", p.len(), y.len())));
    }
    if p.len() < min_n {
        return Err(BinaryError::Shape(format!("need at least {min_n} samples, got {}", p.len())));
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(BinaryError::Shape(format!("probability {bad} outside [0, 1]")));
    }
    if let Some(bad) = y.iter().find(|&&l| l > 1) {
        return Err(BinaryError::Shape(format!("non-binary label {bad}")));
    }
    Ok(())
}

/// Grid of 1001 equally spaced points of the unit interval.
pub fn unit_grid() -> Vec<f64> {
    (0..=1000).map(|i| i as f64 / 1000.0).collect()
}

pub(crate) fn nondecreasing_on_grid(map: &BinaryMap) -> bool {
    let vals: Vec<f64> = unit_grid().into_iter().map(|p| map.eval(p)).collect();
    vals.windows(2).all(|w| w[0] <= w[1])
}

/// Fits any binary method with its default settings.
pub fn fit_binary(
    method: BinaryMethod,
    p_cal: &[f64],
    y_cal: &[u32],
    seed: u64,
) -> Result<BinaryCalibrator, BinaryError> {
    if let Some(variant) = method.logistic_variant() {
        return fit_logistic_family(variant, p_cal, y_cal);
    }
    match method {
        BinaryMethod::Ets => fit_ets_binary(p_cal, y_cal),
        BinaryMethod::HistUniform => fit_histogram(BinStrategy::Uniform, 10, p_cal, y_cal),
        BinaryMethod::HistQuantile => fit_histogram(BinStrategy::Quantile, 10, p_cal, y_cal),
        BinaryMethod::Bbq => fit_bbq(p_cal, y_cal),
        BinaryMethod::Isotonic => fit_isotonic(p_cal, y_cal),
        BinaryMethod::Cir => fit_cir(p_cal, y_cal),
        BinaryMethod::VennAbers => VennAbers::fit(p_cal, y_cal),
        BinaryMethod::Spline => fit_spline(p_cal, y_cal, seed),
        BinaryMethod::CdfSpline => fit_cdf_spline(p_cal, y_cal),
        BinaryMethod::ScalingBinning => fit_scaling_binning(p_cal, y_cal),
        BinaryMethod::BetaKernel => fit_beta_kernel(p_cal, y_cal, seed),
        _ => unreachable!("logistic variants handled above"),
    }
}
