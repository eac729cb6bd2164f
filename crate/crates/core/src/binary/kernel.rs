//! Nadaraya-Watson regression with Beta kernels on the unit interval.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_inputs, mean_label, BinaryCalibrator, BinaryError, BinaryMap, BinaryMethod};
use crate::special::ln_beta;

/// Largest calibration set used as kernel centers; larger sets are subsampled.
pub const KERNEL_MAX_POINTS: usize = 10_000;

/// Scott-style bandwidth `N^{-2/5}`.
pub fn beta_kernel_bandwidth(n: usize) -> f64 {
    (n as f64).powf(-0.4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaKernel {
    pub bandwidth: f64,
    /// Per center: `(α − 1, β − 1, ln B(α, β), label)`.
    centers: Vec<(f64, f64, f64, f64)>,
    prior: f64,
}

impl BetaKernel {
    pub fn new(p: &[f64], y: &[u32], bandwidth: f64) -> Self {
        let centers = p
            .iter()
            .zip(y)
            .map(|(&pi, &yi)| {
                let (a, b) = (pi / bandwidth + 1.0, (1.0 - pi) / bandwidth + 1.0);
                (a - 1.0, b - 1.0, ln_beta(a, b), f64::from(yi))
            })
            .collect();
        Self { bandwidth, centers, prior: mean_label(y) }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn eval(&self, p: f64) -> f64 {
        let (lp, lq) = (p.ln(), (1.0 - p).ln());
        let term = |shape: f64, log: f64| if shape == 0.0 { 0.0 } else { shape * log };
        let logs: Vec<f64> = self
            .centers
            .iter()
            .map(|&(a1, b1, lb, _)| term(a1, lp) + term(b1, lq) - lb)
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return self.prior;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (l, c) in logs.iter().zip(&self.centers) {
            let w = (l - max).exp();
            num += w * c.3;
            den += w;
        }
        num / den
    }
}

pub fn fit_beta_kernel(p_cal: &[f64], y_cal: &[u32], seed: u64) -> Result<BinaryCalibrator, BinaryError> {
    check_inputs(p_cal, y_cal, 1)?;
    let kernel = if p_cal.len() > KERNEL_MAX_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, p_cal.len(), KERNEL_MAX_POINTS).into_vec();
        idx.sort_unstable();
        let p: Vec<f64> = idx.iter().map(|&i| p_cal[i]).collect();
        let y: Vec<u32> = idx.iter().map(|&i| y_cal[i]).collect();
        BetaKernel::new(&p, &y, beta_kernel_bandwidth(KERNEL_MAX_POINTS))
    } else {
        BetaKernel::new(p_cal, y_cal, beta_kernel_bandwidth(p_cal.len()))
    };
    Ok(BinaryCalibrator::new(BinaryMethod::BetaKernel, BinaryMap::BetaKernel(kernel), false))
}

#[cfg(test)]
mod tests {
    use super::super::unit_grid;
    use super::*;
    use statrs::distribution::{Beta, Continuous};

    #[test]
    fn bandwidth_rule() {
        assert!((beta_kernel_bandwidth(10_000) - 0.025_118_864_315_095_8).abs() < 1e-12);
    }

    #[test]
    fn identical_centers_give_mean_label() {
        let c = fit_beta_kernel(&[0.3; 8], &[1, 0, 0, 1, 0, 0, 0, 1], 0).unwrap();
        for x in [0.0, 0.01, 0.3, 0.9, 1.0] {
            assert!((c.apply_one(x) - 3.0 / 8.0).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn single_point() {
        let c = fit_beta_kernel(&[0.5], &[1], 0).unwrap();
        assert!(c.apply(&unit_grid()).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn matches_direct_density_ratio() {
        let p = [0.1, 0.35, 0.5, 0.8, 0.95];
        let y = [0, 1, 0, 1, 1];
        let c = fit_beta_kernel(&p, &y, 0).unwrap();
        let h = beta_kernel_bandwidth(5);
        for x in [0.05, 0.3, 0.6, 0.99] {
            let (mut num, mut den) = (0.0, 0.0);
            for (&pi, &yi) in p.iter().zip(&y) {
                let d = Beta::new(pi / h + 1.0, (1.0 - pi) / h + 1.0).unwrap().pdf(x);
                num += d * f64::from(yi);
                den += d;
            }
            assert!((c.apply_one(x) - num / den).abs() < 1e-10);
        }
    }

    #[test]
    fn underflow_returns_prior() {
        // Interior centers put zero density on the endpoints.
        let c = fit_beta_kernel(&[0.2, 0.4], &[1, 0], 0).unwrap();
        assert_eq!(c.apply_one(0.0), 0.5);
        assert_eq!(c.apply_one(1.0), 0.5);
    }

    #[test]
    fn subsample_is_seeded() {
        let n = KERNEL_MAX_POINTS + 500;
        let p: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let y: Vec<u32> = (0..n).map(|i| (i % 3 == 0) as u32).collect();
        let a = fit_beta_kernel(&p, &y, 4).unwrap();
        let BinaryMap::BetaKernel(k) = &a.map else { unreachable!() };
        assert_eq!(k.len(), KERNEL_MAX_POINTS);
        assert_eq!(a, fit_beta_kernel(&p, &y, 4).unwrap());
        assert_ne!(a, fit_beta_kernel(&p, &y, 5).unwrap());
    }
}
