//! Pool-adjacent-violators isotonic least squares.

use crate::scalar::Scalar;

/// A pooled run of consecutive distinct inputs sharing one fitted value.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T: Scalar = f64> {
    /// Sample-weighted mean of the inputs in the block.
    pub x_mean: T,
    pub value: T,
    pub weight: T,
    /// Index range into the distinct knots.
    pub start: usize,
    pub end: usize,
}

/// Weighted PAVA on already ordered responses. Returns `(value, weight, len)` per block.
pub fn pava<T: Scalar>(y: &[T], w: &[T]) -> Vec<(T, T, usize)> {
    assert_eq!(y.len(), w.len());
    let mut blocks: Vec<(T, T, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        let mut cur = (yi, wi, 1usize);
        while let Some(&(pv, pw, pl)) = blocks.last() {
            if pv <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = pw + cur.1;
            cur = ((pv * pw + cur.0 * cur.1) / tw, tw, pl + cur.2);
        }
        blocks.push(cur);
    }
    blocks
}

/// Non-decreasing step function fitted by least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicFit<T: Scalar = f64> {
    knots: Vec<T>,
    values: Vec<T>,
    blocks: Vec<Block<T>>,
}

/// Distinct sorted inputs with the summed response and count at each.
pub fn pool_ties<T: Scalar>(x: &[T], y: &[T]) -> Vec<(T, T, T)> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite inputs"));
    let mut out: Vec<(T, T, T)> = Vec::new();
    for i in order {
        match out.last_mut() {
            Some(last) if last.0 == x[i] => {
                last.1 = last.1 + y[i];
                last.2 = last.2 + T::one();
            }
            _ => out.push((x[i], y[i], T::one())),
        }
    }
    out
}

impl<T: Scalar> IsotonicFit<T> {
    pub fn fit(x: &[T], y: &[T]) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(!x.is_empty(), "isotonic fit needs at least one sample");
        let pooled = pool_ties(x, y);
        let means: Vec<T> = pooled.iter().map(|&(_, s, c)| s / c).collect();
        let weights: Vec<T> = pooled.iter().map(|&(_, _, c)| c).collect();
        let runs = pava(&means, &weights);
        let mut values = Vec::with_capacity(pooled.len());
        let mut blocks = Vec::with_capacity(runs.len());
        let mut start = 0;
        for (value, weight, len) in runs {
            let end = start + len;
            let x_sum = pooled[start..end]
                .iter()
                .fold(T::zero(), |acc, &(xv, _, c)| acc + xv * c);
            blocks.push(Block { x_mean: x_sum / weight, value, weight, start, end });
            values.extend(std::iter::repeat_n(value, len));
            start = end;
        }
        Self {
            knots: pooled.iter().map(|p| p.0).collect(),
            values,
            blocks,
        }
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Fitted value at each distinct input.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    /// Step interpolation: value of the nearest knot at or below `x`, the first value below range.
    pub fn step(&self, x: T) -> T {
        let idx = self.knots.partition_point(|&k| k <= x);
        self.values[idx.saturating_sub(1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive least squares over every partition of the ordered inputs into
    /// contiguous constant blocks that is non-decreasing.
    fn brute_force(x: &[f64], y: &[f64]) -> Vec<f64> {
        let pooled = pool_ties(x, y);
        let m = pooled.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << (m - 1)) {
            let mut vals = vec![0.0; m];
            let mut start = 0;
            for i in 0..m {
                if i == m - 1 || mask & (1 << i) != 0 {
                    let (s, c) = pooled[start..=i]
                        .iter()
                        .fold((0.0, 0.0), |a, p| (a.0 + p.1, a.1 + p.2));
                    vals[start..=i].fill(s / c);
                    start = i + 1;
                }
            }
            if vals.windows(2).any(|w| w[0] > w[1]) {
                continue;
            }
            let sse: f64 = x
                .iter()
                .zip(y)
                .map(|(&xi, &yi)| {
                    let j = pooled.iter().position(|p| p.0 == xi).unwrap();
                    (yi - vals[j]).powi(2)
                })
                .sum();
            if best.as_ref().is_none_or(|b| sse < b.0 - 1e-15) {
                best = Some((sse, vals));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn pava_example() {
        let fit = IsotonicFit::<f64>::fit(&[0.2, 0.4, 0.6, 0.8], &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(fit.values(), &[0.0, 0.5, 0.5, 1.0]);
        assert_eq!(fit.blocks().len(), 3);
        assert!((fit.blocks()[1].x_mean - 0.5).abs() < 1e-15);
        assert_eq!(fit.step(0.1), 0.0);
        assert_eq!(fit.step(0.7), 0.5);
        assert_eq!(fit.step(0.95), 1.0);
    }

    #[test]
    fn monotone_input_is_unchanged() {
        let fit = IsotonicFit::fit(&[0.1, 0.3, 0.5], &[0.0, 0.0, 1.0]);
        assert_eq!(fit.values(), &[0.0, 0.0, 1.0]);
        let fit = IsotonicFit::fit(&[0.1, 0.3, 0.5], &[1.0; 3]);
        assert_eq!(fit.step(0.0), 1.0);
    }

    #[test]
    fn ties_pooled_before_pava() {
        let fit = IsotonicFit::fit(&[0.5, 0.5, 0.2], &[1.0, 0.0, 0.0]);
        assert_eq!(fit.knots(), &[0.2, 0.5]);
        assert_eq!(fit.values(), &[0.0, 0.5]);
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let n = rng.random_range(1..=6);
            let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..5u8)) / 4.0).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            let fit = IsotonicFit::fit(&x, &y);
            let oracle = brute_force(&x, &y);
            for (a, b) in fit.values().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "{x:?} {y:?}");
            }
        }
    }
}
