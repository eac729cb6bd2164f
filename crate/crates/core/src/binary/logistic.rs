//! Logistic-family scaling maps and the ensemble temperature mixture.

use super::{check_inputs, single_class, BinaryCalibrator, BinaryError, BinaryMap, BinaryMethod};
use crate::optim::{bisect_scaling, minimize, LbfgsConfig, OptimError};
use crate::prob::{binary_logit, sigmoid, LOGIT_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogisticVariant {
    Temperature,
    PlattLogits,
    PlattProbs,
    Quadratic,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogisticFamilyParams {
    /// `σ(α·logit(p))`
    Temperature { alpha: f64 },
    /// `σ(α·logit(p) + β)`
    PlattLogits { alpha: f64, beta: f64 },
    /// `σ(α·p + β)`
    PlattProbs { alpha: f64, beta: f64 },
    /// `σ(γ·logit(p)² + α·logit(p) + β)`
    Quadratic { gamma: f64, alpha: f64, beta: f64 },
    /// `σ(a·ln p − b·ln(1−p) + c)`
    Beta { a: f64, b: f64, c: f64 },
}

fn logit(p: f64) -> f64 {
    binary_logit(p, LOGIT_EPS)
}

fn ln_clip(v: f64) -> f64 {
    v.max(LOGIT_EPS).ln()
}

impl LogisticFamilyParams {
    pub fn score(&self, p: f64) -> f64 {
        match *self {
            LogisticFamilyParams::Temperature { alpha } => alpha * logit(p),
            LogisticFamilyParams::PlattLogits { alpha, beta } => alpha * logit(p) + beta,
            LogisticFamilyParams::PlattProbs { alpha, beta } => alpha * p + beta,
            LogisticFamilyParams::Quadratic { gamma, alpha, beta } => {
                let z = logit(p);
                gamma * z * z + alpha * z + beta
            }
            LogisticFamilyParams::Beta { a, b, c } => a * ln_clip(p) - b * ln_clip(1.0 - p) + c,
        }
    }

    pub fn eval(&self, p: f64) -> f64 {
        sigmoid(self.score(p))
    }

    fn is_monotone(&self) -> bool {
        match *self {
            LogisticFamilyParams::Temperature { alpha } => alpha >= 0.0,
            LogisticFamilyParams::PlattLogits { alpha, .. }
            | LogisticFamilyParams::PlattProbs { alpha, .. } => alpha >= 0.0,
            LogisticFamilyParams::Quadratic { gamma, alpha, .. } => {
                // The score derivative 2γz + α is linear in z; check both ends of the logit range.
                let zmax = logit(1.0);
                alpha + 2.0 * gamma * zmax >= 0.0 && alpha - 2.0 * gamma * zmax >= 0.0
            }
            LogisticFamilyParams::Beta { a, b, .. } => a >= 0.0 && b >= 0.0,
        }
    }
}

fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Mean logistic loss of `σ(x·θ + offset)` over row-major features `x` (n × d).
pub(crate) fn fit_logistic_features(
    x: &[f64],
    d: usize,
    y: &[u32],
    offset: Option<&[f64]>,
    init: &[f64],
) -> Result<Vec<f64>, OptimError> {
    let n = y.len();
    let inv_n = 1.0 / n as f64;
    let obj = |theta: &[f64], grad: &mut [f64]| {
        grad.fill(0.0);
        let mut loss = 0.0;
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mut s: f64 = row.iter().zip(theta).map(|(a, b)| a * b).sum();
            if let Some(off) = offset {
                s += off[i];
            }
            let yi = f64::from(y[i]);
            loss += softplus(s) - yi * s;
            let r = sigmoid(s) - yi;
            for (g, a) in grad.iter_mut().zip(row) {
                *g += r * a;
            }
        }
        grad.iter_mut().for_each(|g| *g *= inv_n);
        loss * inv_n
    };
    let cfg = LbfgsConfig { max_iter: 1000, ..Default::default() };
    Ok(minimize(&obj, init, &cfg)?.x)
}

fn features(p: &[f64], f: impl Fn(f64) -> Vec<f64>) -> Vec<f64> {
    p.iter().flat_map(|&v| f(v)).collect()
}

/// Derivative in α of the mean logloss of `σ(α·z)`.
fn temperature_derivative(z: &[f64], y: &[u32], alpha: f64) -> f64 {
    z.iter()
        .zip(y)
        .map(|(&zi, &yi)| (sigmoid(alpha * zi) - f64::from(yi)) * zi)
        .sum::<f64>()
        / z.len() as f64
}

fn fit_temperature_alpha(p: &[f64], y: &[u32]) -> f64 {
    let z: Vec<f64> = p.iter().map(|&v| logit(v)).collect();
    bisect_scaling(|a| temperature_derivative(&z, y, a))
}

fn fit_platt_logits_params(p: &[f64], y: &[u32]) -> Result<LogisticFamilyParams, OptimError> {
    let x = features(p, |v| vec![logit(v), 1.0]);
    let t = fit_logistic_features(&x, 2, y, None, &[1.0, 0.0])?;
    Ok(LogisticFamilyParams::PlattLogits { alpha: t[0], beta: t[1] })
}

fn fit_beta_params(p: &[f64], y: &[u32]) -> Result<LogisticFamilyParams, OptimError> {
    let cols = |v: f64| [ln_clip(v), -ln_clip(1.0 - v)];
    // Slopes that come out negative are pinned at zero and the rest refitted.
    let mut active = [true, true];
    loop {
        let idx: Vec<usize> = (0..2).filter(|&j| active[j]).collect();
        let x = features(p, |v| {
            let c = cols(v);
            idx.iter().map(|&j| c[j]).chain([1.0]).collect()
        });
        let mut init: Vec<f64> = vec![1.0; idx.len()];
        init.push(0.0);
        let t = fit_logistic_features(&x, idx.len() + 1, y, None, &init)?;
        let mut coef = [0.0, 0.0];
        for (k, &j) in idx.iter().enumerate() {
            coef[j] = t[k];
        }
        let worst = idx
            .iter()
            .copied()
            .filter(|&j| coef[j] < 0.0)
            .min_by(|&a, &b| coef[a].total_cmp(&coef[b]));
        match worst {
            Some(j) => active[j] = false,
            None => {
                return Ok(LogisticFamilyParams::Beta { a: coef[0], b: coef[1], c: t[idx.len()] })
            }
        }
    }
}

fn fit_params(
    variant: LogisticVariant,
    p: &[f64],
    y: &[u32],
) -> Result<LogisticFamilyParams, OptimError> {
    Ok(match variant {
        LogisticVariant::Temperature => {
            LogisticFamilyParams::Temperature { alpha: fit_temperature_alpha(p, y) }
        }
        LogisticVariant::PlattLogits => fit_platt_logits_params(p, y)?,
        LogisticVariant::PlattProbs => {
            let x = features(p, |v| vec![v, 1.0]);
            let t = fit_logistic_features(&x, 2, y, None, &[1.0, 0.0])?;
            LogisticFamilyParams::PlattProbs { alpha: t[0], beta: t[1] }
        }
        LogisticVariant::Quadratic => {
            let x = features(p, |v| {
                let z = logit(v);
                vec![z * z, z, 1.0]
            });
            let t = fit_logistic_features(&x, 3, y, None, &[0.0, 1.0, 0.0])?;
            LogisticFamilyParams::Quadratic { gamma: t[0], alpha: t[1], beta: t[2] }
        }
        LogisticVariant::Beta => fit_beta_params(p, y)?,
    })
}

fn method_of(variant: LogisticVariant) -> BinaryMethod {
    match variant {
        LogisticVariant::Temperature => BinaryMethod::Temperature,
        LogisticVariant::PlattLogits => BinaryMethod::PlattLogits,
        LogisticVariant::PlattProbs => BinaryMethod::PlattProbs,
        LogisticVariant::Quadratic => BinaryMethod::Quadratic,
        LogisticVariant::Beta => BinaryMethod::Beta,
    }
}

/// Fits a logistic-family map by minimizing calibration logloss.
pub fn fit_logistic_family(
    variant: LogisticVariant,
    p_cal: &[f64],
    y_cal: &[u32],
) -> Result<BinaryCalibrator, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    let method = method_of(variant);
    if single_class(y_cal) {
        return Ok(BinaryCalibrator::degenerate(method, y_cal));
    }
    let params = fit_params(variant, p_cal, y_cal)?;
    Ok(BinaryCalibrator::new(method, BinaryMap::Logistic(params), params.is_monotone()))
}

/// Beta calibration under the tied constraint `a = b`, i.e. `σ(a·(ln p − ln(1−p)) + c)`.
pub fn fit_beta_tied(p_cal: &[f64], y_cal: &[u32]) -> Result<LogisticFamilyParams, BinaryError> {
    check_inputs(p_cal, y_cal, 2)?;
    let x = features(p_cal, |v| vec![ln_clip(v) - ln_clip(1.0 - v), 1.0]);
    let t = fit_logistic_features(&x, 2, y_cal, None, &[1.0, 0.0])?;
    Ok(LogisticFamilyParams::Beta { a: t[0], b: t[0], c: t[1] })
}

/// Quadratic scaling with the curvature coefficient held at zero.
pub fn fit_quadratic_without_curvature(
    p_cal: &[f64],
    y_cal: &[u32],
) -> Result<LogisticFamilyParams, BinaryError> {
    check_inputs(p_cal, y_cal, 2)?;
    let gamma = 0.0;
    let offset: Vec<f64> = p_cal.iter().map(|&v| gamma * logit(v) * logit(v)).collect();
    let x = features(p_cal, |v| vec![logit(v), 1.0]);
    let t = fit_logistic_features(&x, 2, y_cal, Some(&offset), &[1.0, 0.0])?;
    Ok(LogisticFamilyParams::Quadratic { gamma, alpha: t[0], beta: t[1] })
}

/// Probability of the observed label under each of three mixture components.
pub(crate) type ComponentRow = [f64; 3];

const ETS_MAX_ITER: usize = 500;
const ETS_STEP: f64 = 1.0;
const ETS_TOL: f64 = 1e-8;

/// Simplex weights minimizing `−mean ln(w · r_i)` by exponentiated gradient from the uniform start.
pub(crate) fn fit_simplex_weights(rows: &[ComponentRow]) -> [f64; 3] {
    let n = rows.len() as f64;
    let mut log_w = [(1.0f64 / 3.0).ln(); 3];
    let mut w = [1.0 / 3.0; 3];
    for _ in 0..ETS_MAX_ITER {
        let mut g = [0.0; 3];
        for r in rows {
            let m = (w[0] * r[0] + w[1] * r[1] + w[2] * r[2]).max(1e-15);
            for j in 0..3 {
                g[j] -= r[j] / m;
            }
        }
        g.iter_mut().for_each(|v| *v /= n);
        let wg: f64 = (0..3).map(|j| w[j] * g[j]).sum();
        let stationarity = (0..3).map(|j| (w[j] * (g[j] - wg)).powi(2)).sum::<f64>().sqrt();
        if stationarity <= ETS_TOL {
            break;
        }
        for j in 0..3 {
            log_w[j] -= ETS_STEP * g[j];
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = log_w.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        for j in 0..3 {
            log_w[j] -= z;
            w[j] = log_w[j].exp();
        }
    }
    let s: f64 = w.iter().sum();
    [w[0] / s, w[1] / s, w[2] / s]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtsParams {
    pub alpha: f64,
    /// Weights of the scaled output, the raw input and the uniform 1/2.
    pub weights: [f64; 3],
}

impl EtsParams {
    pub fn eval(&self, p: f64) -> f64 {
        let ts = sigmoid(self.alpha * logit(p));
        self.weights[0] * ts + self.weights[1] * p + self.weights[2] * 0.5
    }
}

/// Temperature fit followed by simplex weights over (scaled, raw, uniform).
pub fn fit_ets_binary(p_cal: &[f64], y_cal: &[u32]) -> Result<BinaryCalibrator, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    if single_class(y_cal) {
        return Ok(BinaryCalibrator::degenerate(BinaryMethod::Ets, y_cal));
    }
    let alpha = fit_temperature_alpha(p_cal, y_cal);
    let rows: Vec<ComponentRow> = p_cal
        .iter()
        .zip(y_cal)
        .map(|(&p, &y)| {
            let c = [sigmoid(alpha * logit(p)), p, 0.5];
            if y == 1 {
                c
            } else {
                [1.0 - c[0], 1.0 - c[1], 0.5]
            }
        })
        .collect();
    let params = EtsParams { alpha, weights: fit_simplex_weights(&rows) };
    Ok(BinaryCalibrator::new(BinaryMethod::Ets, BinaryMap::Ets(params), true))
}

#[cfg(test)]
mod tests {
    use super::super::tests::sample;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mean_logloss(out: &[f64], y: &[u32]) -> f64 {
        out.iter()
            .zip(y)
            .map(|(&q, &l)| {
                let q = if l == 1 { q } else { 1.0 - q };
                -q.clamp(1e-15, 1.0).ln()
            })
            .sum::<f64>()
            / y.len() as f64
    }

    fn params(c: &BinaryCalibrator) -> LogisticFamilyParams {
        match c.map {
            BinaryMap::Logistic(p) => p,
            ref other => panic!("unexpected map {other:?}"),
        }
    }

    #[test]
    fn temperature_fixes_one_half() {
        let (p, y) = sample(200, 4, 2.0);
        let c = fit_logistic_family(LogisticVariant::Temperature, &p, &y).unwrap();
        assert_eq!(c.apply_one(0.5), 0.5);
    }

    #[test]
    fn temperature_symmetric_targets_give_zero() {
        let c = fit_logistic_family(LogisticVariant::Temperature, &[0.6, 0.6], &[1, 0]).unwrap();
        assert_eq!(params(&c), LogisticFamilyParams::Temperature { alpha: 0.0 });
        assert_eq!(c.apply(&[0.1, 0.6, 0.99]), vec![0.5; 3]);
    }

    #[test]
    fn temperature_never_worse_than_identity() {
        for seed in 0..10 {
            let (p, y) = sample(150, seed, 0.4 + 0.3 * seed as f64);
            let c = fit_logistic_family(LogisticVariant::Temperature, &p, &y).unwrap();
            assert!(mean_logloss(&c.apply(&p), &y) <= mean_logloss(&p, &y) + 1e-10);
        }
    }

    #[test]
    fn temperature_recovers_distortion() {
        let (p, y) = sample(20_000, 11, 2.0);
        let c = fit_logistic_family(LogisticVariant::Temperature, &p, &y).unwrap();
        let LogisticFamilyParams::Temperature { alpha } = params(&c) else { unreachable!() };
        assert!((alpha - 0.5).abs() < 0.05, "{alpha}");
    }

    #[test]
    fn identity_beta_returns_input() {
        let b = LogisticFamilyParams::Beta { a: 1.0, b: 1.0, c: 0.0 };
        for p in [0.01, 0.2, 0.5, 0.73, 0.999] {
            assert!((b.eval(p) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn platt_fit_is_stationary() {
        let (p, y) = sample(500, 2, 1.3);
        let c = fit_logistic_family(LogisticVariant::PlattLogits, &p, &y).unwrap();
        let LogisticFamilyParams::PlattLogits { alpha, beta } = params(&c) else { unreachable!() };
        // Finite-difference gradient of the logloss at the fitted point.
        let loss = |a: f64, b: f64| {
            let m = LogisticFamilyParams::PlattLogits { alpha: a, beta: b };
            mean_logloss(&p.iter().map(|&v| m.eval(v)).collect::<Vec<_>>(), &y)
        };
        let h = 1e-6;
        let ga = (loss(alpha + h, beta) - loss(alpha - h, beta)) / (2.0 * h);
        let gb = (loss(alpha, beta + h) - loss(alpha, beta - h)) / (2.0 * h);
        assert!(ga.abs() < 1e-6 && gb.abs() < 1e-6, "{ga} {gb}");
    }

    #[test]
    fn quadratic_without_curvature_matches_platt() {
        let (p, y) = sample(800, 21, 1.6);
        let platt = fit_logistic_family(LogisticVariant::PlattLogits, &p, &y).unwrap();
        let LogisticFamilyParams::PlattLogits { alpha, beta } = params(&platt) else { unreachable!() };
        let LogisticFamilyParams::Quadratic { gamma, alpha: qa, beta: qb } =
            fit_quadratic_without_curvature(&p, &y).unwrap()
        else {
            unreachable!()
        };
        assert_eq!(gamma, 0.0);
        assert!((qa - alpha).abs() < 1e-6 && (qb - beta).abs() < 1e-6);
    }

    #[test]
    fn quadratic_curvature_vanishes_for_equal_variance_scores() {
        // Class-conditional scores N(±1, 1) at prior 1/2 give a true log-odds of 2s.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = rand_distr::StandardNormal;
        let n = 100_000;
        let mut p = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.random::<bool>();
            let e: f64 = rng.sample(normal);
            let s = if label { 1.0 } else { -1.0 } + e;
            p.push(sigmoid(s));
            y.push(u32::from(label));
        }
        let c = fit_logistic_family(LogisticVariant::Quadratic, &p, &y).unwrap();
        let LogisticFamilyParams::Quadratic { gamma, alpha, .. } = params(&c) else { unreachable!() };
        assert!(gamma.abs() < 0.05, "gamma {gamma}");
        assert!((alpha - 2.0).abs() < 0.1, "alpha {alpha}");
    }

    #[test]
    fn beta_tied_matches_platt_logits() {
        for seed in 0..5 {
            let (p, y) = sample(400, 40 + seed, 0.8);
            let platt = fit_logistic_family(LogisticVariant::PlattLogits, &p, &y).unwrap();
            let LogisticFamilyParams::PlattLogits { alpha, beta } = params(&platt) else { unreachable!() };
            let LogisticFamilyParams::Beta { a, b, c } = fit_beta_tied(&p, &y).unwrap() else { unreachable!() };
            assert_eq!(a, b);
            assert!((a - alpha).abs() < 1e-6 && (c - beta).abs() < 1e-6);
        }
    }

    #[test]
    fn beta_slopes_never_negative() {
        // Labels anti-correlated with p force a negative slope in the unconstrained fit.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..300).map(|_| rng.random_range(0.01..0.99)).collect();
        let y: Vec<u32> = p.iter().map(|&v| u32::from(rng.random::<f64>() > v)).collect();
        let c = fit_logistic_family(LogisticVariant::Beta, &p, &y).unwrap();
        let LogisticFamilyParams::Beta { a, b, .. } = params(&c) else { unreachable!() };
        assert!(a >= 0.0 && b >= 0.0);
        assert!(c.monotone);
    }

    #[test]
    fn degenerate_labels_give_clipped_constant() {
        let c = fit_logistic_family(LogisticVariant::Beta, &[0.2, 0.9], &[0, 0]).unwrap();
        assert_eq!(c.map, BinaryMap::Constant(1e-3));
        assert_eq!(c.flags, vec![super::super::FitFlag::DegenerateLabels]);
    }

    #[test]
    fn ets_weight_endpoints() {
        let ts = EtsParams { alpha: 0.7, weights: [1.0, 0.0, 0.0] };
        let temp = LogisticFamilyParams::Temperature { alpha: 0.7 };
        let uniform = EtsParams { alpha: 0.7, weights: [0.0, 0.0, 1.0] };
        for p in [0.05, 0.3, 0.8] {
            assert!((ts.eval(p) - temp.eval(p)).abs() < 1e-15);
            assert_eq!(uniform.eval(p), 0.5);
        }
    }

    #[test]
    fn ets_weights_on_simplex() {
        let (p, y) = sample(300, 8, 1.8);
        let c = fit_ets_binary(&p, &y).unwrap();
        let BinaryMap::Ets(params) = c.map else { unreachable!() };
        assert!(params.weights.iter().all(|&w| w >= 0.0));
        assert!((params.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ets_near_identity_on_calibrated_data() {
        let (p, y) = sample(100_000, 13, 1.0);
        let c = fit_ets_binary(&p, &y).unwrap();
        for g in (1..20).map(|i| i as f64 / 20.0) {
            assert!((c.apply_one(g) - g).abs() < 0.02, "{g}: {}", c.apply_one(g));
        }
    }
}
