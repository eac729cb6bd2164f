//! Softmax of an affine map of the log-probabilities: temperature, vector,
//! matrix and Dirichlet scaling with their regularized variants.

use ndarray::{Array2, ArrayView2};

use super::MulticlassError;
use crate::optim::{bisect_scaling, minimize, LbfgsConfig};
use crate::prob::{log_probs, softmax_in_place, ProbabilityMatrix, LOGIT_EPS};

/// Largest class count accepted by the full-matrix structure.
pub const FULL_MAX_CLASSES: usize = 256;
pub const AFFINE_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineStructure {
    /// `W = αI`, `b = 0`.
    Scalar,
    /// `W = diag(a)`.
    Diagonal,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    None,
    /// `λ_off·‖offdiag(W)‖² + λ_bias·‖b‖²`
    Odir { off: f64, bias: f64 },
    /// ODIR plus `λ_diag·‖diag(W) − 1‖²`.
    Structured { diag: f64, off: f64, bias: f64 },
}

/// Default ODIR strengths.
pub const ODIR_DEFAULT: Regularization = Regularization::Odir { off: 1e-2, bias: 1e-2 };

/// Constants `(c_diag, c_off, c_bias)` of the structured strengths `λ_g = c_g·K/n`.
pub const STRUCTURED_CONSTANTS: (f64, f64, f64) = (0.1, 1.0, 0.01);

impl Regularization {
    /// Structured strengths scaled by the class count and calibration size.
    pub fn structured_default(k: usize, n: usize) -> Self {
        let s = k as f64 / n as f64;
        let (d, o, b) = STRUCTURED_CONSTANTS;
        Regularization::Structured { diag: d * s, off: o * s, bias: b * s }
    }

    /// `(λ_diag, λ_off, λ_bias)`.
    fn strengths(self) -> (f64, f64, f64) {
        match self {
            Regularization::None => (0.0, 0.0, 0.0),
            Regularization::Odir { off, bias } => (0.0, off, bias),
            Regularization::Structured { diag, off, bias } => (diag, off, bias),
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        match self {
            Regularization::None => Regularization::None,
            Regularization::Odir { off, bias } => Regularization::Odir { off: off * factor, bias: bias * factor },
            Regularization::Structured { diag, off, bias } => Regularization::Structured {
                diag: diag * factor,
                off: off * factor,
                bias: bias * factor,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLogitParams {
    pub structure: AffineStructure,
    pub regularization: Regularization,
    /// K × K weights applied to the log-probabilities.
    pub weights: Array2<f64>,
    pub bias: Vec<f64>,
}

impl AffineLogitParams {
    pub fn identity(k: usize, structure: AffineStructure) -> Self {
        Self {
            structure,
            regularization: Regularization::None,
            weights: Array2::eye(k),
            bias: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.bias.len()
    }

    pub fn apply(&self, p: &ProbabilityMatrix) -> ProbabilityMatrix {
        let z = log_probs(p, LOGIT_EPS);
        ProbabilityMatrix::from_normalized(self.scores(z.view()))
    }

    /// Row-wise `softmax(W z + b)` before normalization checks.
    pub(crate) fn scores(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut s = z.dot(&self.weights.t());
        for mut row in s.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        s
    }
}

/// Derivative in α of the mean cross-entropy of `softmax(α z)`.
fn scalar_derivative(z: ArrayView2<'_, f64>, y: &[u32], alpha: f64) -> f64 {
    let k = z.ncols();
    let mut buf = vec![0.0; k];
    let mut total = 0.0;
    for (row, &label) in z.rows().into_iter().zip(y) {
        for (b, &v) in buf.iter_mut().zip(row) {
            *b = alpha * v;
        }
        softmax_in_place(&mut buf);
        for (j, (&q, &v)) in buf.iter().zip(row).enumerate() {
            let target = if j == label as usize { 1.0 } else { 0.0 };
            total += (q - target) * v;
        }
    }
    total / y.len() as f64
}

pub(crate) fn fit_scalar_alpha(z: ArrayView2<'_, f64>, y: &[u32]) -> f64 {
    bisect_scaling(|a| scalar_derivative(z, y, a))
}

/// Mean cross-entropy plus penalties, and its gradient, over packed parameters.
struct AffineObjective<'a> {
    z: ArrayView2<'a, f64>,
    y: &'a [u32],
    structure: AffineStructure,
    strengths: (f64, f64, f64),
}

impl AffineObjective<'_> {
    fn k(&self) -> usize {
        self.z.ncols()
    }

    fn n_weights(&self) -> usize {
        match self.structure {
            AffineStructure::Diagonal => self.k(),
            _ => self.k() * self.k(),
        }
    }

    fn unpack(&self, theta: &[f64]) -> AffineLogitParams {
        let k = self.k();
        let nw = self.n_weights();
        let weights = match self.structure {
            AffineStructure::Diagonal => Array2::from_diag(&ndarray::Array1::from(theta[..k].to_vec())),
            _ => Array2::from_shape_vec((k, k), theta[..nw].to_vec()).expect("k² weights"),
        };
        AffineLogitParams {
            structure: self.structure,
            regularization: Regularization::None,
            weights,
            bias: theta[nw..].to_vec(),
        }
    }

    fn identity_init(&self) -> Vec<f64> {
        let k = self.k();
        match self.structure {
            AffineStructure::Diagonal => [vec![1.0; k], vec![0.0; k]].concat(),
            _ => {
                let mut t = vec![0.0; k * k + k];
                for i in 0..k {
                    t[i * k + i] = 1.0;
                }
                t
            }
        }
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.k();
        let nw = self.n_weights();
        let diagonal = self.structure == AffineStructure::Diagonal;
        let n = self.y.len() as f64;
        grad.fill(0.0);
        let mut loss = 0.0;
        let mut s = vec![0.0; k];
        let (w, b) = theta.split_at(nw);
        for (row, &label) in self.z.rows().into_iter().zip(self.y) {
            for (j, sj) in s.iter_mut().enumerate() {
                *sj = b[j]
                    + if diagonal {
                        w[j] * row[j]
                    } else {
                        w[j * k..(j + 1) * k].iter().zip(row).map(|(a, c)| a * c).sum::<f64>()
                    };
            }
            let true_score = s[label as usize];
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in s.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            loss += max + sum.ln() - true_score;
            for j in 0..k {
                let r = s[j] / sum - if j == label as usize { 1.0 } else { 0.0 };
                grad[nw + j] += r;
                if diagonal {
                    grad[j] += r * row[j];
                } else {
                    for (g, &c) in grad[j * k..(j + 1) * k].iter_mut().zip(row) {
                        *g += r * c;
                    }
                }
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        loss /= n;
        let (l_diag, l_off, l_bias) = self.strengths;
        for j in 0..k {
            loss += l_bias * b[j] * b[j];
            grad[nw + j] += 2.0 * l_bias * b[j];
        }
        for (idx, &v) in w.iter().enumerate() {
            let on_diag = diagonal || idx / k == idx % k;
            if on_diag {
                loss += l_diag * (v - 1.0) * (v - 1.0);
                grad[idx] += 2.0 * l_diag * (v - 1.0);
            } else {
                loss += l_off * v * v;
                grad[idx] += 2.0 * l_off * v;
            }
        }
        loss
    }
}

pub fn fit_affine_logit(
    structure: AffineStructure,
    regularization: Regularization,
    p_cal: &ProbabilityMatrix,
    y_cal: &[u32],
) -> Result<AffineLogitParams, MulticlassError> {
    super::check_inputs(p_cal, y_cal)?;
    let k = p_cal.k();
    let n = p_cal.n();
    if structure == AffineStructure::Full {
        if k > FULL_MAX_CLASSES {
            return Err(MulticlassError::Dimension { k, max: FULL_MAX_CLASSES });
        }
        if n < k {
            return Err(MulticlassError::Shape(format!("full structure needs n ≥ K, got n={n}, K={k}")));
        }
    }
    let z = log_probs(p_cal, LOGIT_EPS);
    if structure == AffineStructure::Scalar {
        let alpha = fit_scalar_alpha(z.view(), y_cal);
        let mut params = AffineLogitParams::identity(k, structure);
        params.weights *= alpha;
        params.regularization = regularization;
        return Ok(params);
    }
    let obj = AffineObjective { z: z.view(), y: y_cal, structure, strengths: regularization.strengths() };
    let cfg = LbfgsConfig { max_iter: AFFINE_MAX_ITER, ..Default::default() };
    let min = minimize(&|t: &[f64], g: &mut [f64]| obj.eval(t, g), &obj.identity_init(), &cfg)?;
    let mut params = obj.unpack(&min.x);
    params.regularization = regularization;
    Ok(params)
}
