//! Penalized logistic splines on the logit scale and the derivative-of-CDF spline.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::logistic::fit_logistic_family;
use super::{
    check_inputs, mean_label, nondecreasing_on_grid, single_class, BinaryCalibrator, BinaryError,
    BinaryMap, BinaryMethod, FitFlag, LogisticVariant,
};
use crate::optim::OptimError;
use crate::prob::{binary_logit, sigmoid, LOGIT_EPS};
use crate::spline::{quantile_knots, NaturalSpline};

/// Roughness penalties searched by cross-validation, ascending.
pub const SPLINE_LAMBDAS: [f64; 7] = [1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2];
pub const SPLINE_MAX_KNOTS: usize = 20;
pub const SPLINE_MIN_SAMPLES: usize = 10;
/// Output clip of the logistic spline.
pub const SPLINE_CLIP: f64 = 1e-6;
const CV_FOLDS: usize = 5;
const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineMap {
    pub spline: NaturalSpline,
    pub coef: Vec<f64>,
    pub lambda: f64,
}

impl SplineMap {
    pub fn eval(&self, p: f64) -> f64 {
        let z = binary_logit(p, LOGIT_EPS);
        sigmoid(self.spline.eval(&self.coef, z)).clamp(SPLINE_CLIP, 1.0 - SPLINE_CLIP)
    }
}

/// Gram matrix of the second-difference penalty `Σ (c_{j+1} − 2c_j + c_{j−1})²`.
fn second_difference_gram(k: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(k, k);
    for j in 1..k.saturating_sub(1) {
        let idx = [j - 1, j, j + 1];
        let w = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                g[(idx[a], idx[b])] += w[a] * w[b];
            }
        }
    }
    g
}

/// Damped Newton on mean logloss of `σ(Xc)` plus `λ cᵀGc`.
fn fit_penalized(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    gram: &DMatrix<f64>,
    lambda: f64,
    init: &[f64],
) -> Result<Vec<f64>, OptimError> {
    let k = design.ncols();
    let inv_n = 1.0 / design.nrows() as f64;
    let objective = |c: &DVector<f64>| -> f64 {
        let s = design * c;
        let loss: f64 = s.iter().zip(y.iter()).map(|(&si, &yi)| softplus(si) - yi * si).sum();
        loss * inv_n + lambda * c.dot(&(gram * c))
    };
    let mut c = DVector::from_column_slice(init);
    let mut value = objective(&c);
    for iteration in 0..NEWTON_MAX_ITER {
        let s = design * &c;
        let q = s.map(sigmoid);
        let grad = design.tr_mul(&((&q - y) * inv_n)) + gram * &c * (2.0 * lambda);
        let grad_norm = grad.norm();
        if !grad_norm.is_finite() {
            return Err(OptimError::NonFinite);
        }
        if grad_norm <= NEWTON_TOL {
            return Ok(c.as_slice().to_vec());
        }
        let mut weighted = design.clone();
        for (mut row, &qi) in weighted.row_iter_mut().zip(q.iter()) {
            row *= qi * (1.0 - qi) * inv_n;
        }
        let hess = design.tr_mul(&weighted) + gram * (2.0 * lambda);
        let mut jitter = 0.0;
        let step = loop {
            let mut h = hess.clone();
            for a in 0..k {
                h[(a, a)] += jitter;
            }
            if let Some(ch) = h.cholesky() {
                break ch.solve(&grad);
            }
            jitter = if jitter == 0.0 { 1e-12 * (1.0 + hess.trace()) } else { jitter * 10.0 };
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-12 {
            let cand = &c - &step * t;
            let v = objective(&cand);
            if v <= value - 1e-4 * t * slope {
                c = cand;
                value = v;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            // No representable decrease left along the Newton direction.
            return Ok(c.as_slice().to_vec());
        }
        if iteration + 1 == NEWTON_MAX_ITER {
            return Err(OptimError::NonConvergence { iterations: NEWTON_MAX_ITER, grad_norm });
        }
    }
    unreachable!("the loop returns on its last iteration")
}

fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn heldout_logloss(design: &DMatrix<f64>, y: &DVector<f64>, c: &[f64]) -> f64 {
    let s = design * DVector::from_column_slice(c);
    let total: f64 = s.iter().zip(y.iter()).map(|(&si, &yi)| softplus(si) - yi * si).sum();
    total / design.nrows() as f64
}

fn select_rows(design: &DMatrix<f64>, y: &[u32], rows: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(rows.len(), design.ncols(), |r, c| design[(rows[r], c)]);
    let t = DVector::from_iterator(rows.len(), rows.iter().map(|&i| f64::from(y[i])));
    (x, t)
}

/// Fold index per sample from a seeded shuffle.
fn fold_assignment(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % CV_FOLDS;
    }
    fold
}

fn platt_fallback(method: BinaryMethod, p: &[f64], y: &[u32]) -> Result<BinaryCalibrator, BinaryError> {
    let mut c = fit_logistic_family(LogisticVariant::PlattLogits, p, y)?;
    c.method = method;
    Ok(c.with_flag(FitFlag::TooFewSamples))
}

/// Logistic natural cubic spline on the logits with a cross-validated roughness penalty.
pub fn fit_spline(p_cal: &[f64], y_cal: &[u32], seed: u64) -> Result<BinaryCalibrator, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    let n = p_cal.len();
    if n < SPLINE_MIN_SAMPLES {
        return platt_fallback(BinaryMethod::Spline, p_cal, y_cal);
    }
    let z: Vec<f64> = p_cal.iter().map(|&v| binary_logit(v, LOGIT_EPS)).collect();
    let knots = quantile_knots(&z, SPLINE_MAX_KNOTS);
    if single_class(y_cal) || knots.len() < 2 {
        let c = mean_label(y_cal).clamp(SPLINE_CLIP, 1.0 - SPLINE_CLIP);
        let mut cal = BinaryCalibrator::new(BinaryMethod::Spline, BinaryMap::Constant(c), true);
        if single_class(y_cal) {
            cal = cal.with_flag(FitFlag::DegenerateLabels);
        }
        return Ok(cal);
    }
    let spline = NaturalSpline::new(knots);
    let k = spline.len();
    let mut design = DMatrix::zeros(n, k);
    for (i, &zi) in z.iter().enumerate() {
        for (j, b) in spline.basis(zi).into_iter().enumerate() {
            design[(i, j)] = b;
        }
    }
    let gram = second_difference_gram(k);
    let identity: Vec<f64> = spline.knots().to_vec();

    let folds = fold_assignment(n, seed);
    let splits: Vec<_> = (0..CV_FOLDS)
        .map(|f| {
            let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| folds[i] != f);
            (select_rows(&design, y_cal, &train), select_rows(&design, y_cal, &test))
        })
        .collect();
    // Each fold walks the penalty grid from strongest to weakest, warm-starting every fit.
    let per_fold: Vec<Vec<f64>> = splits
        .par_iter()
        .map(|((xt, yt), (xv, yv))| {
            let mut losses = vec![0.0; SPLINE_LAMBDAS.len()];
            let mut warm = identity.clone();
            for (li, &lambda) in SPLINE_LAMBDAS.iter().enumerate().rev() {
                losses[li] = match fit_penalized(xt, yt, &gram, lambda, &warm) {
                    Ok(c) => {
                        let l = heldout_logloss(xv, yv, &c) * xv.nrows() as f64;
                        warm = c;
                        l
                    }
                    Err(_) => f64::INFINITY,
                };
            }
            losses
        })
        .collect();
    let cv_loss: Vec<f64> = (0..SPLINE_LAMBDAS.len())
        .map(|li| per_fold.iter().map(|l| l[li]).sum())
        .collect();
    let best = (0..SPLINE_LAMBDAS.len())
        .min_by(|&a, &b| cv_loss[a].total_cmp(&cv_loss[b]))
        .expect("non-empty grid");
    let lambda = SPLINE_LAMBDAS[best];
    let targets = DVector::from_iterator(n, y_cal.iter().map(|&l| f64::from(l)));
    let coef = fit_penalized(&design, &targets, &gram, lambda, &identity)?;
    let map = BinaryMap::Spline(SplineMap { spline, coef, lambda });
    let monotone = nondecreasing_on_grid(&map);
    let cal = BinaryCalibrator::new(BinaryMethod::Spline, map, monotone);
    Ok(if monotone { cal } else { cal.with_flag(FitFlag::NonMonotone) })
}

/// Derivative of a least-squares spline fitted to the cumulative positives curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSplineMap {
    pub spline: NaturalSpline,
    pub coef: Vec<f64>,
    /// Distinct sorted calibration scores with their empirical CDF level.
    pub levels: Vec<(f64, f64)>,
}

impl CdfSplineMap {
    /// Empirical CDF level of `p` by linear interpolation, clamped to the observed range.
    pub fn level(&self, p: f64) -> f64 {
        let first = self.levels[0];
        let last = self.levels[self.levels.len() - 1];
        if p <= first.0 {
            return first.1;
        }
        if p >= last.0 {
            return last.1;
        }
        let j = self.levels.partition_point(|l| l.0 <= p);
        let (x0, t0) = self.levels[j - 1];
        let (x1, t1) = self.levels[j];
        t0 + (p - x0) / (x1 - x0) * (t1 - t0)
    }

    pub fn eval(&self, p: f64) -> f64 {
        self.spline.eval_deriv(&self.coef, self.level(p)).clamp(0.0, 1.0)
    }
}

pub fn fit_cdf_spline(p_cal: &[f64], y_cal: &[u32]) -> Result<BinaryCalibrator, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    let n = p_cal.len();
    if n < SPLINE_MIN_SAMPLES {
        return platt_fallback(BinaryMethod::CdfSpline, p_cal, y_cal);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p_cal[a].total_cmp(&p_cal[b]));
    let inv_n = 1.0 / n as f64;
    let t: Vec<f64> = (1..=n).map(|i| i as f64 * inv_n).collect();
    let mut h = Vec::with_capacity(n);
    let mut positives = 0u64;
    for &i in &order {
        positives += u64::from(y_cal[i]);
        h.push(positives as f64 * inv_n);
    }
    let mut levels: Vec<(f64, f64)> = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        match levels.last_mut() {
            Some(last) if last.0 == p_cal[i] => last.1 = t[rank],
            _ => levels.push((p_cal[i], t[rank])),
        }
    }

    let spline = NaturalSpline::new(quantile_knots(&t, SPLINE_MAX_KNOTS.min(n)));
    let k = spline.len();
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xth = DVector::<f64>::zeros(k);
    for (&ti, &hi) in t.iter().zip(&h) {
        let b = spline.basis(ti);
        for a in 0..k {
            xth[a] += b[a] * hi;
            for c in 0..k {
                xtx[(a, c)] += b[a] * b[c];
            }
        }
    }
    let coef = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xth),
        None => {
            let ridge = 1e-12 * (1.0 + xtx.trace());
            let reg = xtx + DMatrix::identity(k, k) * ridge;
            reg.cholesky().expect("ridge makes the Gram matrix positive definite").solve(&xth)
        }
    };
    let map = BinaryMap::CdfSpline(CdfSplineMap { spline, coef: coef.as_slice().to_vec(), levels });
    let cal = BinaryCalibrator::new(BinaryMethod::CdfSpline, map, false);
    Ok(if single_class(y_cal) { cal.with_flag(FitFlag::DegenerateLabels) } else { cal })
}
