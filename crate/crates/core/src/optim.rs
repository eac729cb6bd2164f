//! Deterministic smooth minimizers: limited-memory BFGS with a strong-Wolfe
//! line search, and gradient bisection for one-parameter convex scaling fits.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("objective is not finite at the starting point")]
    NonFinite,
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// The line search could not decrease the objective any further in floating point
    /// before the gradient tolerance was met.
    pub stalled: bool,
}

/// A smooth objective returning its value and writing its gradient.
pub trait Objective {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Objective for F {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Point {
    alpha: f64,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn probe<O: Objective>(obj: &O, x: &[f64], d: &[f64], alpha: f64) -> Point {
    let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    let mut grad = vec![0.0; x.len()];
    let value = obj.eval(&xt, &mut grad);
    let slope = dot(&grad, d);
    Point { alpha, value, grad, slope }
}

/// Strong-Wolfe line search (bracketing followed by interpolating zoom).
fn line_search<O: Objective>(
    obj: &O,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    step0: f64,
) -> Option<Point> {
    let start = Point {
        alpha: 0.0,
        value: f0,
        grad: Vec::new(),
        slope: slope0,
    };
    let mut prev = start;
    let mut alpha = step0;
    for i in 0..60 {
        let cur = probe(obj, x, d, alpha);
        if !cur.value.is_finite() || !cur.slope.is_finite() {
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if cur.value > f0 + C1 * alpha * slope0 || (i > 0 && cur.value >= prev.value) {
            return zoom(obj, x, f0, slope0, d, prev, cur);
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(obj, x, f0, slope0, d, cur, prev);
        }
        alpha *= 2.0;
        prev = cur;
    }
    (prev.alpha > 0.0).then_some(prev)
}

fn zoom<O: Objective>(
    obj: &O,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    mut lo: Point,
    mut hi: Point,
) -> Option<Point> {
    for _ in 0..60 {
        let width = hi.alpha - lo.alpha;
        if width.abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        // Quadratic interpolation from (lo value, lo slope, hi value), safeguarded.
        let denom = 2.0 * (hi.value - lo.value - lo.slope * width);
        let mut alpha = if denom.is_finite() && denom > 0.0 {
            lo.alpha - lo.slope * width * width / denom
        } else {
            lo.alpha + 0.5 * width
        };
        let (a, b) = if lo.alpha < hi.alpha {
            (lo.alpha, hi.alpha)
        } else {
            (hi.alpha, lo.alpha)
        };
        let margin = 0.1 * (b - a);
        if !(alpha > a + margin && alpha < b - margin) {
            alpha = 0.5 * (a + b);
        }
        let cur = probe(obj, x, d, alpha);
        if !cur.value.is_finite() || cur.value > f0 + C1 * alpha * slope0 || cur.value >= lo.value {
            hi = cur;
        } else {
            if cur.slope.abs() <= -C2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    (lo.alpha > 0.0 && lo.value < f0).then_some(lo)
}

/// Minimizes a smooth objective from `x0` until the gradient norm falls to `grad_tol`.
pub fn minimize<O: Objective>(
    obj: &O,
    x0: &[f64],
    cfg: &LbfgsConfig,
) -> Result<Minimum, OptimError> {
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; dim];
    let mut value = obj.eval(&x, &mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFinite);
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    loop {
        let grad_norm = norm(&grad);
        if grad_norm <= cfg.grad_tol {
            return Ok(Minimum { x, value, grad_norm, iterations, stalled: false });
        }
        if iterations >= cfg.max_iter {
            return Err(OptimError::NonConvergence { iterations, grad_norm });
        }
        iterations += 1;

        let mut d = two_loop(&grad, &history);
        let mut slope = dot(&grad, &d);
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            d = grad.iter().map(|g| -g).collect();
            slope = -grad_norm * grad_norm;
        }
        let step0 = if history.is_empty() { (1.0 / grad_norm).min(1.0) } else { 1.0 };
        let mut found = line_search(obj, &x, value, slope, &d, step0);
        if found.is_none() && !history.is_empty() {
            history.clear();
            d = grad.iter().map(|g| -g).collect();
            slope = -grad_norm * grad_norm;
            found = line_search(obj, &x, value, slope, &d, (1.0 / grad_norm).min(1.0));
        }
        let Some(point) = found else {
            return Ok(Minimum { x, value, grad_norm, iterations, stalled: true });
        };
        let s: Vec<f64> = d.iter().map(|v| v * point.alpha).collect();
        let y: Vec<f64> = point.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        value = point.value;
        grad = point.grad;
        if sy > 1e-16 * norm(&s) * norm(&y) && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
    }
}

fn two_loop(grad: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

/// Search bracket of the one-parameter logit scaling coefficient.
pub const SCALING_BRACKET: (f64, f64) = (1e-2, 1e2);

/// Minimizes a convex one-dimensional loss on `[0, hi]` given its derivative.
///
/// Bisection runs on a log scale over [`SCALING_BRACKET`] and returns the upper end
/// when the derivative is still negative there. When the derivative is already
/// positive at the lower end, the minimizer lies in `[0, lo]`: zero is returned if the
/// derivative is non-negative at zero, otherwise that interval is bisected linearly.
pub fn bisect_scaling(derivative: impl Fn(f64) -> f64) -> f64 {
    let (lo0, hi0) = SCALING_BRACKET;
    let g_lo = derivative(lo0);
    if g_lo > 0.0 {
        if derivative(0.0) >= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, lo0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if derivative(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return 0.5 * (lo + hi);
    }
    if g_lo == 0.0 {
        return lo0;
    }
    if derivative(hi0) <= 0.0 {
        return hi0;
    }
    let (mut lo, mut hi) = (lo0.ln(), hi0.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = derivative(mid.exp());
        if g > 0.0 {
            hi = mid;
        } else if g < 0.0 {
            lo = mid;
        } else {
            return mid.exp();
        }
    }
    (0.5 * (lo + hi)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let m = minimize(&rosenbrock, &[-1.2, 1.0], &LbfgsConfig::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn lbfgs_solves_ill_conditioned_quadratic() {
        let scales = [1e-3, 1.0, 1e3, 10.0];
        let obj = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..4 {
                let r = x[i] - i as f64;
                g[i] = scales[i] * r;
                f += 0.5 * scales[i] * r * r;
            }
            f
        };
        let m = minimize(&obj, &[0.0; 4], &LbfgsConfig::default()).unwrap();
        assert!(m.grad_norm <= 1e-8);
        for i in 0..4 {
            assert!((m.x[i] - i as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn lbfgs_reports_iteration_cap() {
        // Unbounded below along a ray with shrinking gradient: never reaches tolerance.
        let obj = |x: &[f64], g: &mut [f64]| {
            g[0] = -(-x[0]).exp() / (1.0 + (-x[0]).exp());
            (1.0 + (-x[0]).exp()).ln()
        };
        let cfg = LbfgsConfig { max_iter: 5, ..Default::default() };
        assert!(matches!(minimize(&obj, &[0.0], &cfg), Err(OptimError::NonConvergence { .. })));
    }

    #[test]
    fn bisection_finds_interior_minimum() {
        let a = bisect_scaling(|x| x - 3.0);
        assert!((a - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_boundaries() {
        assert_eq!(bisect_scaling(|_| -1.0), 1e2);
        assert_eq!(bisect_scaling(|_| 1.0), 0.0);
        let a = bisect_scaling(|x| x - 0.004);
        assert!((a - 0.004).abs() < 1e-15);
    }
}
