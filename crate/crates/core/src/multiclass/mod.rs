//! Native multiclass calibrators and the one-vs-rest wrapper around binary ones.

mod affine;
mod kernel;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::binary::{fit_binary, BinaryCalibrator, BinaryError, BinaryMethod, FitFlag};
use crate::optim::OptimError;
use crate::prob::{log_probs, softmax_in_place, ProbabilityMatrix, LOGIT_EPS};

pub use affine::{
    fit_affine_logit, AffineLogitParams, AffineStructure, Regularization, AFFINE_MAX_ITER,
    FULL_MAX_CLASSES, ODIR_DEFAULT, STRUCTURED_CONSTANTS,
};
pub use kernel::{dirichlet_kernel_bandwidth, fit_dirichlet_kernel, DirichletKernel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MulticlassError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("full matrix structure supports at most {max} classes, got {k}")]
    Dimension { k: usize, max: usize },
    #[error(transparent)]
    NonConvergence(#[from] OptimError),
    #[error(transparent)]
    Binary(#[from] BinaryError),
}

pub(crate) fn check_inputs(p: &ProbabilityMatrix, y: &[u32]) -> Result<(), MulticlassError> {
    if p.n() != y.len() {
        return Err(MulticlassError::Shape(format!("{} rows but {} labels", p.n(), y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l as usize >= p.k()) {
        return Err(MulticlassError::Shape(format!("label {bad} out of range for K={}", p.k())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MulticlassMethod {
    Temperature,
    Ets,
    VectorScaling,
    MatrixScaling,
    Dirichlet,
    StructuredMatrix,
    StructuredVector,
    DirichletKernel,
    OneVsRest(BinaryMethod),
}

impl MulticlassMethod {
    pub const NATIVE: [MulticlassMethod; 8] = [
        MulticlassMethod::Temperature,
        MulticlassMethod::Ets,
        MulticlassMethod::VectorScaling,
        MulticlassMethod::MatrixScaling,
        MulticlassMethod::Dirichlet,
        MulticlassMethod::StructuredMatrix,
        MulticlassMethod::StructuredVector,
        MulticlassMethod::DirichletKernel,
    ];

    /// Binary methods wrapped one-vs-rest in the standard catalog.
    pub const OVR_METHODS: [BinaryMethod; 7] = [
        BinaryMethod::HistUniform,
        BinaryMethod::HistQuantile,
        BinaryMethod::Bbq,
        BinaryMethod::Isotonic,
        BinaryMethod::Cir,
        BinaryMethod::VennAbers,
        BinaryMethod::Spline,
    ];

    fn native_name(self) -> Option<&'static str> {
        Some(match self {
            MulticlassMethod::Temperature => "TS",
            MulticlassMethod::Ets => "ETS",
            MulticlassMethod::VectorScaling => "VS",
            MulticlassMethod::MatrixScaling => "MS",
            MulticlassMethod::Dirichlet => "Dirichlet",
            MulticlassMethod::StructuredMatrix => "SMS",
            MulticlassMethod::StructuredVector => "SVS",
            MulticlassMethod::DirichletKernel => "Kernel",
            MulticlassMethod::OneVsRest(_) => return None,
        })
    }

    /// Wrapped binary methods keep their binary name unless it collides with a native one.
    pub fn name(self) -> String {
        match self {
            MulticlassMethod::OneVsRest(m) => {
                if MulticlassMethod::NATIVE.iter().any(|n| n.native_name() == Some(m.name())) {
                    format!("OvR-{}", m.name())
                } else {
                    m.name().to_string()
                }
            }
            native => native.native_name().expect("native method").to_string(),
        }
    }

    /// The catalog evaluated by default on multiclass benchmarks.
    pub fn catalog() -> Vec<MulticlassMethod> {
        let mut all = MulticlassMethod::NATIVE.to_vec();
        all.extend(MulticlassMethod::OVR_METHODS.map(MulticlassMethod::OneVsRest));
        all
    }
}

impl fmt::Display for MulticlassMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MulticlassMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(m) = MulticlassMethod::NATIVE
            .into_iter()
            .find(|m| m.native_name().is_some_and(|n| n.eq_ignore_ascii_case(s)))
        {
            return Ok(m);
        }
        let inner = s.strip_prefix("OvR-").or_else(|| s.strip_prefix("ovr-")).unwrap_or(s);
        inner
            .parse::<BinaryMethod>()
            .map(MulticlassMethod::OneVsRest)
            .map_err(|_| format!("unknown multiclass calibrator `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassEts {
    pub alpha: f64,
    /// Weights of the scaled output, the raw input and the uniform row.
    pub weights: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum MulticlassMap {
    Affine(AffineLogitParams),
    Ets(MulticlassEts),
    DirichletKernel(DirichletKernel),
    OneVsRest(Vec<BinaryCalibrator>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassCalibrator {
    pub method: MulticlassMethod,
    pub map: MulticlassMap,
    /// Class count seen at fit time.
    pub k: usize,
    pub flags: Vec<FitFlag>,
}

impl MulticlassCalibrator {
    /// Calibrated probabilities; the class count must match the fit. One-vs-rest rows
    /// whose calibrated scores sum to zero become uniform and set [`FitFlag::ZeroRowSum`].
    pub fn apply(&self, p: &ProbabilityMatrix) -> Result<(ProbabilityMatrix, Vec<FitFlag>), MulticlassError> {
        if p.k() != self.k {
            return Err(MulticlassError::Shape(format!("fitted for K={}, got K={}", self.k, p.k())));
        }
        Ok(match &self.map {
            MulticlassMap::Affine(params) => (params.apply(p), Vec::new()),
            MulticlassMap::Ets(ets) => (apply_ets(ets, p), Vec::new()),
            MulticlassMap::DirichletKernel(kernel) => (kernel.apply(p), Vec::new()),
            MulticlassMap::OneVsRest(cals) => apply_ovr(cals, p),
        })
    }
}

fn apply_ets(ets: &MulticlassEts, p: &ProbabilityMatrix) -> ProbabilityMatrix {
    let k = p.k();
    let z = log_probs(p, LOGIT_EPS);
    let uniform = 1.0 / k as f64;
    let mut out = Array2::zeros((p.n(), k));
    let [w_ts, w_raw, w_uni] = ets.weights;
    let mut buf = vec![0.0; k];
    for ((zr, pr), mut orow) in z.rows().into_iter().zip(p.values().rows()).zip(out.rows_mut()) {
        for (b, &v) in buf.iter_mut().zip(zr) {
            *b = ets.alpha * v;
        }
        softmax_in_place(&mut buf);
        for j in 0..k {
            orow[j] = w_ts * buf[j] + w_raw * pr[j] + w_uni * uniform;
        }
    }
    ProbabilityMatrix::from_normalized(out)
}

fn apply_ovr(cals: &[BinaryCalibrator], p: &ProbabilityMatrix) -> (ProbabilityMatrix, Vec<FitFlag>) {
    let k = p.k();
    let columns: Vec<Vec<f64>> = cals.par_iter().enumerate().map(|(j, c)| c.apply(&p.column(j))).collect();
    let mut out = Array2::zeros((p.n(), k));
    let mut flags = Vec::new();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let total: f64 = columns.iter().map(|c| c[i]).sum();
        if total > 0.0 {
            for j in 0..k {
                row[j] = columns[j][i] / total;
            }
        } else {
            row.fill(1.0 / k as f64);
            if !flags.contains(&FitFlag::ZeroRowSum) {
                flags.push(FitFlag::ZeroRowSum);
            }
        }
    }
    (ProbabilityMatrix::from_normalized(out), flags)
}

/// Scalar scaling followed by simplex weights over (scaled, raw, uniform).
pub fn fit_ets_multiclass(p_cal: &ProbabilityMatrix, y_cal: &[u32]) -> Result<MulticlassEts, MulticlassError> {
    check_inputs(p_cal, y_cal)?;
    let k = p_cal.k();
    let z = log_probs(p_cal, LOGIT_EPS);
    let alpha = affine::fit_scalar_alpha(z.view(), y_cal);
    let mut buf = vec![0.0; k];
    let rows: Vec<[f64; 3]> = z
        .rows()
        .into_iter()
        .zip(p_cal.values().rows())
        .zip(y_cal)
        .map(|((zr, pr), &label)| {
            for (b, &v) in buf.iter_mut().zip(zr) {
                *b = alpha * v;
            }
            softmax_in_place(&mut buf);
            let l = label as usize;
            [buf[l], pr[l], 1.0 / k as f64]
        })
        .collect();
    Ok(MulticlassEts { alpha, weights: crate::binary::fit_simplex_weights(&rows) })
}

/// One binary calibrator per class on `(p_{·k}, 1{y = k})`.
pub fn fit_ovr(
    method: BinaryMethod,
    p_cal: &ProbabilityMatrix,
    y_cal: &[u32],
    seed: u64,
) -> Result<Vec<BinaryCalibrator>, MulticlassError> {
    check_inputs(p_cal, y_cal)?;
    (0..p_cal.k())
        .into_par_iter()
        .map(|j| {
            let target: Vec<u32> = y_cal.iter().map(|&l| u32::from(l as usize == j)).collect();
            Ok(fit_binary(method, &p_cal.column(j), &target, seed)?)
        })
        .collect()
}

/// Fits any multiclass method with its default settings.
pub fn fit_multiclass(
    method: MulticlassMethod,
    p_cal: &ProbabilityMatrix,
    y_cal: &[u32],
    seed: u64,
) -> Result<MulticlassCalibrator, MulticlassError> {
    check_inputs(p_cal, y_cal)?;
    let (k, n) = (p_cal.k(), p_cal.n());
    let affine = |s, r| fit_affine_logit(s, r, p_cal, y_cal).map(MulticlassMap::Affine);
    let mut flags = Vec::new();
    let map = match method {
        MulticlassMethod::Temperature => affine(AffineStructure::Scalar, Regularization::None)?,
        MulticlassMethod::VectorScaling => affine(AffineStructure::Diagonal, Regularization::None)?,
        MulticlassMethod::MatrixScaling => affine(AffineStructure::Full, Regularization::None)?,
        MulticlassMethod::Dirichlet => affine(AffineStructure::Full, ODIR_DEFAULT)?,
        MulticlassMethod::StructuredMatrix => {
            affine(AffineStructure::Full, Regularization::structured_default(k, n))?
        }
        MulticlassMethod::StructuredVector => {
            affine(AffineStructure::Diagonal, Regularization::structured_default(k, n))?
        }
        MulticlassMethod::Ets => MulticlassMap::Ets(fit_ets_multiclass(p_cal, y_cal)?),
        MulticlassMethod::DirichletKernel => {
            MulticlassMap::DirichletKernel(fit_dirichlet_kernel(p_cal, y_cal, seed))
        }
        MulticlassMethod::OneVsRest(m) => {
            let cals = fit_ovr(m, p_cal, y_cal, seed)?;
            for c in &cals {
                for &f in &c.flags {
                    if !flags.contains(&f) {
                        flags.push(f);
                    }
                }
            }
            MulticlassMap::OneVsRest(cals)
        }
    };
    Ok(MulticlassCalibrator { method, map, k, flags })
}
