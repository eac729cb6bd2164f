//! Isotonic regression, centered isotonic regression and Venn-Abers prediction.

use rayon::prelude::*;

use super::{check_inputs, single_class, BinaryCalibrator, BinaryError, BinaryMap, BinaryMethod, FitFlag};
use crate::isotonic::{pava, pool_ties, IsotonicFit};

fn labels_as_f64(y: &[u32]) -> Vec<f64> {
    y.iter().map(|&l| f64::from(l)).collect()
}

/// PAVA step function; ties in `p` are pooled first.
pub fn fit_isotonic(p_cal: &[f64], y_cal: &[u32]) -> Result<BinaryCalibrator, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    let fit = IsotonicFit::fit(p_cal, &labels_as_f64(y_cal));
    let c = BinaryCalibrator::new(BinaryMethod::Isotonic, BinaryMap::Isotonic(fit), true);
    Ok(if single_class(y_cal) { c.with_flag(FitFlag::DegenerateLabels) } else { c })
}

/// Linear interpolation through PAVA block centers.
pub fn fit_cir(p_cal: &[f64], y_cal: &[u32]) -> Result<BinaryCalibrator, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    let fit = IsotonicFit::fit(p_cal, &labels_as_f64(y_cal));
    let centers = fit.blocks().iter().map(|b| (b.x_mean, b.value)).collect();
    let c = BinaryCalibrator::new(BinaryMethod::Cir, BinaryMap::Cir(centers), true);
    Ok(if single_class(y_cal) { c.with_flag(FitFlag::DegenerateLabels) } else { c })
}

/// Piecewise-linear interpolation with constant extrapolation.
pub(crate) fn interpolate_centers(centers: &[(f64, f64)], p: f64) -> f64 {
    let first = centers[0];
    let last = centers[centers.len() - 1];
    if p <= first.0 {
        return first.1;
    }
    if p >= last.0 {
        return last.1;
    }
    let j = centers.partition_point(|c| c.0 <= p);
    let (x0, y0) = centers[j - 1];
    let (x1, y1) = centers[j];
    y0 + (p - x0) / (x1 - x0) * (y1 - y0)
}

/// Calibration set for inductive Venn-Abers prediction, stored pooled by distinct score.
#[derive(Debug, Clone, PartialEq)]
pub struct VennAbers {
    /// `(score, positives, count)` per distinct calibration score, ascending.
    pooled: Vec<(f64, f64, f64)>,
}

/// Where a test score lands among the distinct calibration scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Slot {
    Tie(usize),
    Before(usize),
}

impl VennAbers {
    pub fn fit(p_cal: &[f64], y_cal: &[u32]) -> Result<BinaryCalibrator, BinaryError> {
        check_inputs(p_cal, y_cal, 1)?;
        let va = Self { pooled: pool_ties(p_cal, &labels_as_f64(y_cal)) };
        Ok(BinaryCalibrator::new(BinaryMethod::VennAbers, BinaryMap::VennAbers(va), false))
    }

    fn slot(&self, p: f64) -> Slot {
        let j = self.pooled.partition_point(|c| c.0 < p);
        match self.pooled.get(j) {
            Some(c) if c.0 == p => Slot::Tie(j),
            _ => Slot::Before(j),
        }
    }

    /// Isotonic value at the test point after adding it with `label`.
    fn augmented_value(&self, slot: Slot, label: f64) -> f64 {
        let n = self.pooled.len();
        let mut means = Vec::with_capacity(n + 1);
        let mut weights = Vec::with_capacity(n + 1);
        let target = match slot {
            Slot::Tie(j) | Slot::Before(j) => j,
        };
        for (i, &(_, s, c)) in self.pooled.iter().enumerate() {
            if i == target {
                match slot {
                    Slot::Tie(_) => {
                        means.push((s + label) / (c + 1.0));
                        weights.push(c + 1.0);
                        continue;
                    }
                    Slot::Before(_) => {
                        means.push(label);
                        weights.push(1.0);
                    }
                }
            }
            means.push(s / c);
            weights.push(c);
        }
        if target == n {
            means.push(label);
            weights.push(1.0);
        }
        let mut start = 0;
        for (value, _, len) in pava(&means, &weights) {
            if target < start + len {
                return value;
            }
            start += len;
        }
        unreachable!("target index lies inside the augmented sequence")
    }

    fn bounds_at(&self, slot: Slot) -> (f64, f64) {
        (self.augmented_value(slot, 0.0), self.augmented_value(slot, 1.0))
    }

    /// Lower and upper Venn-Abers probabilities `(p₀, p₁)` at `p`.
    pub fn bounds(&self, p: f64) -> (f64, f64) {
        self.bounds_at(self.slot(p))
    }

    pub fn predict(&self, p: f64) -> f64 {
        merge(self.bounds(p))
    }

    /// Batch prediction; test points sharing a slot share one pair of fits.
    pub fn predict_many(&self, p: &[f64]) -> Vec<f64> {
        let slots: Vec<Slot> = p.iter().map(|&v| self.slot(v)).collect();
        let mut unique = slots.clone();
        unique.sort_unstable();
        unique.dedup();
        let merged: Vec<f64> = unique.par_iter().map(|&s| merge(self.bounds_at(s))).collect();
        slots
            .iter()
            .map(|s| merged[unique.binary_search(s).expect("slot was collected")])
            .collect()
    }
}

fn merge((p0, p1): (f64, f64)) -> f64 {
    p1 / (1.0 - p0 + p1)
}

/// Merged Venn-Abers probabilities for each test point.
pub fn venn_abers(p_cal: &[f64], y_cal: &[u32], p_test: &[f64]) -> Result<Vec<f64>, BinaryError> {
    let c = VennAbers::fit(p_cal, y_cal)?;
    Ok(c.apply(p_test))
}

/// `(p₀, p₁)` for each test point.
pub fn venn_abers_bounds(
    p_cal: &[f64],
    y_cal: &[u32],
    p_test: &[f64],
) -> Result<Vec<(f64, f64)>, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    let va = VennAbers { pooled: pool_ties(p_cal, &labels_as_f64(y_cal)) };
    Ok(p_test.iter().map(|&p| va.bounds(p)).collect())
}

#[cfg(test)]
mod tests {
    use super::super::tests::sample;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn isotonic_example() {
        let c = fit_isotonic(&[0.2, 0.4, 0.6, 0.8], &[0, 1, 0, 1]).unwrap();
        assert_eq!(c.apply(&[0.2, 0.4, 0.6, 0.8]), vec![0.0, 0.5, 0.5, 1.0]);
        assert_eq!(c.apply(&[0.1, 0.5, 0.9]), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn isotonic_monotone_labels_are_reproduced() {
        let c = fit_isotonic(&[0.3, 0.1, 0.2, 0.4], &[1, 0, 0, 1]).unwrap();
        assert_eq!(c.apply(&[0.1, 0.2, 0.3, 0.4]), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn isotonic_constant_labels() {
        let c = fit_isotonic(&[0.3, 0.1, 0.2], &[1, 1, 1]).unwrap();
        assert_eq!(c.apply(&[0.0, 0.5, 1.0]), vec![1.0; 3]);
    }

    #[test]
    fn cir_example() {
        let c = fit_cir(&[0.2, 0.4, 0.6, 0.8], &[0, 1, 0, 1]).unwrap();
        let BinaryMap::Cir(centers) = &c.map else { unreachable!() };
        assert_eq!(centers.len(), 3);
        for (got, want) in centers.iter().zip([(0.2, 0.0), (0.5, 0.5), (0.8, 1.0)]) {
            assert!((got.0 - want.0).abs() < 1e-15 && (got.1 - want.1).abs() < 1e-15);
        }
        assert!((c.apply_one(0.35) - 0.25).abs() < 1e-15);
        assert!((c.apply_one(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(c.apply_one(0.0), 0.0);
        assert_eq!(c.apply_one(1.0), 1.0);
    }

    #[test]
    fn venn_abers_examples() {
        let b = venn_abers_bounds(&[0.1, 0.9], &[0, 1], &[0.5]).unwrap();
        assert_eq!(b, vec![(0.0, 1.0)]);
        assert_eq!(venn_abers(&[0.1, 0.9], &[0, 1], &[0.5]).unwrap(), vec![0.5]);

        let b = venn_abers_bounds(&[0.5], &[1], &[0.5]).unwrap();
        assert_eq!(b, vec![(0.5, 1.0)]);
        let v = venn_abers(&[0.5], &[1], &[0.5]).unwrap()[0];
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(merge((0.3, 0.3)), 0.3);
    }

    /// Augmented fits done by refitting the whole isotonic model from scratch.
    fn naive_bounds(p: &[f64], y: &[u32], x: f64) -> (f64, f64) {
        let fit_with = |label: f64| {
            let mut xs = p.to_vec();
            let mut ys: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
            xs.push(x);
            ys.push(label);
            let fit = IsotonicFit::fit(&xs, &ys);
            let i = fit.knots().iter().position(|&k| k == x).unwrap();
            fit.values()[i]
        };
        (fit_with(0.0), fit_with(1.0))
    }

    #[test]
    fn venn_abers_matches_naive_refit() {
        let (p, y) = sample(80, 4, 1.3);
        let mut test: Vec<f64> = crate::binary::unit_grid().into_iter().step_by(37).collect();
        test.extend_from_slice(&p[..10]);
        let got = venn_abers(&p, &y, &test).unwrap();
        for (&x, &g) in test.iter().zip(&got) {
            let (p0, p1) = naive_bounds(&p, &y, x);
            assert!((g - merge((p0, p1))).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn venn_abers_output_between_bounds(
            data in prop::collection::vec((0.0f64..1.0, 0u32..2), 1..30),
            test in prop::collection::vec(0.0f64..=1.0, 1..10),
        ) {
            let (p, y): (Vec<f64>, Vec<u32>) = data.into_iter().unzip();
            let bounds = venn_abers_bounds(&p, &y, &test).unwrap();
            let merged = venn_abers(&p, &y, &test).unwrap();
            for ((p0, p1), v) in bounds.into_iter().zip(merged) {
                prop_assert!(p0 <= p1);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(p0 - 1e-12 <= v && v <= p1 + 1e-12);
            }
        }
    }
}
