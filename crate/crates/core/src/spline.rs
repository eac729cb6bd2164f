//! Natural cubic splines parameterized by their values at the knots.
//!
//! The second derivatives at the knots are a fixed linear map of the knot values
//! (zero at both ends), so evaluation and differentiation are linear in the
//! coefficients and a design row can be precomputed for each input.

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline {
    knots: Vec<f64>,
    /// `second[i][j]`: weight of coefficient `j` in the second derivative at knot `i`.
    second: Vec<Vec<f64>>,
}

impl NaturalSpline {
    /// Knots must be strictly increasing, at least two.
    pub fn new(knots: Vec<f64>) -> Self {
        assert!(knots.len() >= 2, "a spline needs two knots");
        assert!(knots.windows(2).all(|w| w[0] < w[1]), "knots must increase");
        let k = knots.len();
        let mut second = vec![vec![0.0; k]; k];
        if k > 2 {
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            let m = k - 2;
            // Tridiagonal system for interior second derivatives, one right-hand side per coefficient.
            let diag: Vec<f64> = (1..=m).map(|i| 2.0 * (h[i - 1] + h[i])).collect();
            let sub: Vec<f64> = (2..=m).map(|i| h[i - 1]).collect();
            for j in 0..k {
                let rhs: Vec<f64> = (1..=m)
                    .map(|i| {
                        let e = |t: usize| if t == j { 1.0 } else { 0.0 };
                        6.0 * ((e(i + 1) - e(i)) / h[i] - (e(i) - e(i - 1)) / h[i - 1])
                    })
                    .collect();
                let sol = solve_tridiagonal(&sub, &diag, &sub, &rhs);
                for (i, v) in sol.into_iter().enumerate() {
                    second[i + 1][j] = v;
                }
            }
        }
        Self { knots, second }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn interval(&self, x: f64) -> usize {
        let k = self.knots.len();
        self.knots.partition_point(|&t| t <= x).clamp(1, k - 1) - 1
    }

    fn accumulate(&self, out: &mut [f64], row: usize, w: f64) {
        for (o, s) in out.iter_mut().zip(&self.second[row]) {
            *o += w * s;
        }
    }

    /// Weights `b` with `S(x) = b · c`; linear extrapolation outside the knots.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let k = self.knots.len();
        let mut b = vec![0.0; k];
        let first = self.knots[0];
        let last = self.knots[k - 1];
        if x < first || x > last {
            let (edge, at) = if x < first { (0, first) } else { (k - 1, last) };
            let d = self.deriv_basis(at);
            b[edge] = 1.0;
            for (bj, dj) in b.iter_mut().zip(&d) {
                *bj += (x - at) * dj;
            }
            return b;
        }
        let j = self.interval(x);
        let (t0, t1) = (self.knots[j], self.knots[j + 1]);
        let h = t1 - t0;
        let (a, c) = ((t1 - x) / h, (x - t0) / h);
        b[j] += a;
        b[j + 1] += c;
        self.accumulate(&mut b, j, (a * a * a - a) * h * h / 6.0);
        self.accumulate(&mut b, j + 1, (c * c * c - c) * h * h / 6.0);
        b
    }

    /// Weights `d` with `S'(x) = d · c`.
    pub fn deriv_basis(&self, x: f64) -> Vec<f64> {
        let k = self.knots.len();
        let x = x.clamp(self.knots[0], self.knots[k - 1]);
        let mut d = vec![0.0; k];
        let j = self.interval(x);
        let (t0, t1) = (self.knots[j], self.knots[j + 1]);
        let h = t1 - t0;
        let (a, c) = ((t1 - x) / h, (x - t0) / h);
        d[j] -= 1.0 / h;
        d[j + 1] += 1.0 / h;
        self.accumulate(&mut d, j, -(3.0 * a * a - 1.0) * h / 6.0);
        self.accumulate(&mut d, j + 1, (3.0 * c * c - 1.0) * h / 6.0);
        d
    }

    pub fn eval(&self, coef: &[f64], x: f64) -> f64 {
        self.basis(x).iter().zip(coef).map(|(b, c)| b * c).sum()
    }

    pub fn eval_deriv(&self, coef: &[f64], x: f64) -> f64 {
        self.deriv_basis(x).iter().zip(coef).map(|(b, c)| b * c).sum()
    }
}

/// Thomas algorithm; `sub` and `sup` have one fewer entry than `diag`.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { sup[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i - 1] * c[i - 1];
        c[i] = if i < n - 1 { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Equally spaced quantiles (linear interpolation) of `values`, duplicates removed.
pub fn quantile_knots(values: &[f64], count: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let mut knots: Vec<f64> = Vec::with_capacity(count);
    for j in 0..count {
        let pos = if count == 1 { 0.0 } else { j as f64 * (n - 1) as f64 / (count - 1) as f64 };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let q = sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]);
        if knots.last().is_none_or(|&l| q > l) {
            knots.push(q);
        }
    }
    knots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_data_is_reproduced_everywhere() {
        let s = NaturalSpline::new(vec![-2.0, -0.5, 0.0, 1.0, 3.0]);
        let coef: Vec<f64> = s.knots().iter().map(|t| 2.0 * t + 1.0).collect();
        for x in [-5.0, -2.0, -1.0, 0.3, 2.9, 3.0, 7.0] {
            assert!((s.eval(&coef, x) - (2.0 * x + 1.0)).abs() < 1e-12);
            assert!((s.eval_deriv(&coef, x) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolates_knot_values_with_natural_ends() {
        let s = NaturalSpline::new(vec![0.0, 1.0, 2.0, 3.0]);
        let coef = [0.0, 1.0, 0.0, 2.0];
        for (t, c) in s.knots().iter().zip(coef) {
            assert!((s.eval(&coef, *t) - c).abs() < 1e-12);
        }
        // Second derivative vanishes at the ends: the one-sided slopes match the extrapolation.
        let eps = 1e-6;
        let left = (s.eval(&coef, 0.0) - s.eval(&coef, -eps)) / eps;
        assert!((left - s.eval_deriv(&coef, 0.0)).abs() < 1e-6);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let s = NaturalSpline::new(vec![0.0, 0.3, 0.5, 0.9, 1.0]);
        let coef = [0.1, -0.4, 0.8, 0.2, 0.5];
        for x in [0.05, 0.31, 0.6, 0.95] {
            let h = 1e-6;
            let fd = (s.eval(&coef, x + h) - s.eval(&coef, x - h)) / (2.0 * h);
            assert!((fd - s.eval_deriv(&coef, x)).abs() < 1e-6);
        }
    }

    #[test]
    fn quantile_knots_dedupe() {
        assert_eq!(quantile_knots(&[1.0, 1.0, 1.0], 5), vec![1.0]);
        assert_eq!(quantile_knots(&[0.0, 1.0, 2.0, 3.0, 4.0], 3), vec![0.0, 2.0, 4.0]);
    }
}
