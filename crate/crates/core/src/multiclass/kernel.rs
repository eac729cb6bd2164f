//! Nadaraya-Watson regression on the simplex with Dirichlet kernels.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binary::KERNEL_MAX_POINTS;
use crate::prob::ProbabilityMatrix;
use crate::special::ln_gamma;

/// Simplex-adapted Scott bandwidth `N^{-2/(d+4)}` with intrinsic dimension `d = K − 1`.
pub fn dirichlet_kernel_bandwidth(n: usize, k: usize) -> f64 {
    (n as f64).powf(-2.0 / (k as f64 + 3.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletKernel {
    pub bandwidth: f64,
    /// Row per center: concentration minus one, `α_k − 1 = p_k / h`.
    shapes: Array2<f64>,
    /// `ln B(α)` per center.
    log_norm: Vec<f64>,
    labels: Vec<u32>,
    frequencies: Vec<f64>,
}

impl DirichletKernel {
    pub fn new(p: &ProbabilityMatrix, y: &[u32], bandwidth: f64) -> Self {
        let k = p.k();
        let shapes = p.values().mapv(|v| v / bandwidth);
        let total_ln_gamma = ln_gamma(1.0 / bandwidth + k as f64);
        let log_norm = shapes
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&s| ln_gamma(s + 1.0)).sum::<f64>() - total_ln_gamma)
            .collect();
        let mut frequencies = vec![0.0; k];
        for &l in y {
            frequencies[l as usize] += 1.0 / y.len() as f64;
        }
        Self { bandwidth, shapes, log_norm, labels: y.to_vec(), frequencies }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let logs_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let logs: Vec<f64> = self
            .shapes
            .rows()
            .into_iter()
            .zip(&self.log_norm)
            .map(|(shape, &ln_b)| {
                let mut acc = -ln_b;
                for (&s, &lx) in shape.iter().zip(&logs_x) {
                    if s != 0.0 {
                        acc += s * lx;
                    }
                }
                acc
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return self.frequencies.clone();
        }
        let mut out = vec![0.0; x.len()];
        for (l, &label) in logs.iter().zip(&self.labels) {
            out[label as usize] += (l - max).exp();
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }

    pub fn apply(&self, p: &ProbabilityMatrix) -> ProbabilityMatrix {
        let rows: Vec<Vec<f64>> = p
            .values()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| self.predict_row(r))
            .collect();
        let k = p.k();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        ProbabilityMatrix::from_normalized(Array2::from_shape_vec((p.n(), k), flat).expect("n × K"))
    }
}

pub fn fit_dirichlet_kernel(p_cal: &ProbabilityMatrix, y_cal: &[u32], seed: u64) -> DirichletKernel {
    let k = p_cal.k();
    if p_cal.n() > KERNEL_MAX_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, p_cal.n(), KERNEL_MAX_POINTS).into_vec();
        idx.sort_unstable();
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| p_cal.row(i).to_vec()).collect();
        let sub = ProbabilityMatrix::from_rows(&rows).expect("rows of a valid matrix");
        let y: Vec<u32> = idx.iter().map(|&i| y_cal[i]).collect();
        DirichletKernel::new(&sub, &y, dirichlet_kernel_bandwidth(KERNEL_MAX_POINTS, k))
    } else {
        DirichletKernel::new(p_cal, y_cal, dirichlet_kernel_bandwidth(p_cal.n(), k))
    }
}
