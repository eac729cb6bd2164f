//! Probability containers, validation, and the logit/softmax transforms shared
//! by every calibrator and metric.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::scalar::Scalar;

/// Clip floor applied before every logarithm of a probability.
pub const LOGIT_EPS: f64 = 1e-12;

/// Allowed deviation of a row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("entry ({row}, {col}) = {value} lies outside [0, 1]")]
    Range { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, not 1")]
    RowSum { row: usize, sum: f64 },
    #[error("label {label} at index {index} is not below the class count {k}")]
    Label { index: usize, label: u32, k: usize },
}

fn row_sum_tolerance<T: Scalar>(k: usize) -> f64 {
    ROW_SUM_TOL.max(4.0 * k as f64 * T::epsilon().as_f64())
}

/// Checks that `values` is a non-empty row-stochastic matrix with at least two columns.
pub fn validate<T: Scalar>(values: ArrayView2<'_, T>) -> Result<(), ProbError> {
    let (n, k) = values.dim();
    if k < 2 {
        return Err(ProbError::Shape(format!("need at least 2 classes, got {k}")));
    }
    if n < 1 {
        return Err(ProbError::Shape("need at least one row".into()));
    }
    let tol = row_sum_tolerance::<T>(k);
    for (i, row) in values.axis_iter(Axis(0)).enumerate() {
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let v = v.as_f64();
            if !(0.0..=1.0).contains(&v) {
                return Err(ProbError::Range { row: i, col: j, value: v });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > tol {
            return Err(ProbError::RowSum { row: i, sum });
        }
    }
    Ok(())
}

/// n × K row-stochastic predictions of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix<T: Scalar = f64> {
    values: Array2<T>,
}

impl<T: Scalar> ProbabilityMatrix<T> {
    pub fn new(values: Array2<T>) -> Result<Self, ProbError> {
        validate(values.view())?;
        Ok(Self { values })
    }

    pub fn from_shape_vec(n: usize, k: usize, data: Vec<T>) -> Result<Self, ProbError> {
        let values = Array2::from_shape_vec((n, k), data)
            .map_err(|e| ProbError::Shape(e.to_string()))?;
        Self::new(values)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, ProbError> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(ProbError::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_shape_vec(rows.len(), k, data)
    }

    /// Builds a two-column matrix `[1 - p, p]` from positive-class probabilities.
    pub fn from_positive(p: &[T]) -> Result<Self, ProbError> {
        let data = p.iter().flat_map(|&v| [T::one() - v, v]).collect();
        Self::from_shape_vec(p.len(), 2, data)
    }

    /// Wraps output that is row-stochastic by construction (softmax, renormalized rows).
    pub(crate) fn from_normalized(values: Array2<T>) -> Self {
        debug_assert!(validate(values.view()).is_ok());
        Self { values }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.values.row(i)
    }

    pub fn column(&self, k: usize) -> Vec<T> {
        self.values.column(k).to_vec()
    }

    /// Positive-class column of a binary matrix.
    pub fn positive(&self) -> Vec<T> {
        self.column(self.k() - 1)
    }

    pub fn into_inner(self) -> Array2<T> {
        self.values
    }

    pub fn validate(&self) -> Result<(), ProbError> {
        validate(self.values.view())
    }

    /// Index of the largest entry of each row, ties to the lowest class.
    pub fn argmax(&self) -> Vec<usize> {
        self.values.axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ProbabilityMatrix<U> {
        ProbabilityMatrix {
            values: self.values.mapv(|v| U::lit(v.as_f64())),
        }
    }
}

pub(crate) fn argmax<T: Scalar>(row: impl Iterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_val = T::neg_infinity();
    for (j, v) in row.enumerate() {
        if v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

/// Integer labels in `{0, …, K−1}`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelVector(Vec<u32>);

impl LabelVector {
    pub fn new(labels: Vec<u32>) -> Self {
        Self(labels)
    }

    pub fn checked(labels: Vec<u32>, k: usize) -> Result<Self, ProbError> {
        let v = Self(labels);
        v.check_classes(k)?;
        Ok(v)
    }

    pub fn check_classes(&self, k: usize) -> Result<(), ProbError> {
        match self.0.iter().enumerate().find(|(_, &l)| l as usize >= k) {
            Some((index, &label)) => Err(ProbError::Label { index, label, k }),
            None => Ok(()),
        }
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Indicator `1{y_i = k}` as reals.
    pub fn indicator(&self, k: usize) -> Vec<f64> {
        self.0.iter().map(|&l| if l as usize == k { 1.0 } else { 0.0 }).collect()
    }

    /// Relative frequency of each class.
    pub fn frequencies(&self, k: usize) -> Vec<f64> {
        let mut counts = vec![0.0; k];
        for &l in &self.0 {
            counts[l as usize] += 1.0;
        }
        let n = self.0.len().max(1) as f64;
        counts.iter().map(|c| c / n).collect()
    }
}

impl From<Vec<u32>> for LabelVector {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Binary,
    Multiclass,
}

impl Task {
    pub fn for_classes(k: usize) -> Self {
        if k == 2 {
            Task::Binary
        } else {
            Task::Multiclass
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Binary => "binary",
            Task::Multiclass => "multiclass",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// One dataset–model pair: calibration predictions and labels plus test predictions and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment<T: Scalar = f64> {
    pub id: String,
    pub dataset: String,
    pub model: String,
    pub task: Task,
    pub p_cal: ProbabilityMatrix<T>,
    pub y_cal: LabelVector,
    pub p_test: ProbabilityMatrix<T>,
    pub y_test: LabelVector,
}

impl<T: Scalar> Experiment<T> {
    pub fn validate(&self) -> Result<(), ProbError> {
        let k = self.p_cal.k();
        if self.p_test.k() != k {
            return Err(ProbError::Shape(format!(
                "calibration has {k} classes, test has {}",
                self.p_test.k()
            )));
        }
        if self.task != Task::for_classes(k) {
            return Err(ProbError::Shape(format!("task {} with {k} classes", self.task)));
        }
        if self.y_cal.len() != self.p_cal.n() || self.y_test.len() != self.p_test.n() {
            return Err(ProbError::Shape("label count differs from row count".into()));
        }
        self.y_cal.check_classes(k)?;
        self.y_test.check_classes(k)
    }

    pub fn k(&self) -> usize {
        self.p_cal.k()
    }
}

/// `ln(clip(p, eps, 1))` elementwise.
pub fn log_probs<T: Scalar>(p: &ProbabilityMatrix<T>, eps: T) -> Array2<T> {
    let eps = eps.max(T::min_positive_value());
    p.values.mapv(|v| v.max(eps).min(T::one()).ln())
}

/// Log-odds `ln(p'/(1−p'))` with `p' = clip(p, eps, 1−eps)`.
///
/// For `f32` the floor is raised to machine epsilon so that `1 − eps` stays below one.
pub fn binary_logit<T: Scalar>(p: T, eps: T) -> T {
    let eps = T::clip_floor(eps);
    let half = T::lit(0.5);
    // Clip on the side closer to its bound so that `1 − p` keeps full precision.
    if p <= half {
        let q = p.max(eps);
        (q / (T::one() - q)).ln()
    } else {
        let q = (T::one() - p).max(eps);
        ((T::one() - q) / q).ln()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(z: ArrayView2<'_, T>) -> ProbabilityMatrix<T> {
    let mut out = z.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    ProbabilityMatrix::from_normalized(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn validate_examples() {
        assert!(validate(array![[0.5, 0.5]].view()).is_ok());
        assert!(matches!(
            validate(array![[0.7, 0.4]].view()),
            Err(ProbError::RowSum { row: 0, .. })
        ));
        assert!(validate(array![[1.0, 0.0], [0.0, 1.0]].view()).is_ok());
        assert!(matches!(validate(array![[1.0]].view()), Err(ProbError::Shape(_))));
        assert!(matches!(
            validate(array![[1.2, -0.2]].view()),
            Err(ProbError::Range { col: 0, .. })
        ));
        assert!(validate(Array2::<f64>::zeros((0, 3)).view()).is_err());
    }

    #[test]
    fn f32_matrices_validate() {
        let p = ProbabilityMatrix::<f32>::from_rows(&[vec![0.1, 0.2, 0.7]]).unwrap();
        assert_eq!(p.k(), 3);
    }

    #[test]
    fn log_probs_examples() {
        let e = std::f64::consts::E;
        let p = ProbabilityMatrix::from_rows(&[vec![1.0 / e, 1.0 - 1.0 / e], vec![0.0, 1.0]]).unwrap();
        let z = log_probs(&p, LOGIT_EPS);
        assert!((z[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((z[[1, 0]] - 1e-12f64.ln()).abs() < 1e-12);
        assert!((z[[1, 0]] + 27.631).abs() < 1e-3);
        assert_eq!(z[[1, 1]], 0.0);
        let u = ProbabilityMatrix::from_rows(&[vec![0.25; 4]]).unwrap();
        assert!(log_probs(&u, LOGIT_EPS).iter().all(|&v| v == 0.25f64.ln()));
    }

    #[test]
    fn binary_logit_examples() {
        assert_eq!(binary_logit(0.5, LOGIT_EPS), 0.0);
        assert!((binary_logit(0.9, LOGIT_EPS) - 9f64.ln()).abs() < 1e-12);
        let top = binary_logit(1.0, LOGIT_EPS);
        assert!((top - ((1.0 - 1e-12) / 1e-12f64).ln()).abs() < 1e-9);
        assert!((top - 27.631).abs() < 1e-3);
        for p in [1e-12, 0.2, 0.5, 0.77, 1.0 - 1e-12] {
            assert!((sigmoid(binary_logit(p, LOGIT_EPS)) - p).abs() < 1e-12);
        }
        assert!(binary_logit(1.0f32, 1e-12).is_finite());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(array![[0.0, 0.0, 0.0], [1000.0, 1000.0, f64::NEG_INFINITY]].view());
        for j in 0..3 {
            assert!((s.row(0)[j] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(s.row(1).to_vec(), vec![0.5, 0.5, 0.0]);
        let s = softmax(array![[2f64.ln(), 0.0]].view());
        assert!((s.row(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.row(0)[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn labels_checked_against_classes() {
        assert!(LabelVector::checked(vec![0, 1, 2], 3).is_ok());
        assert!(matches!(
            LabelVector::checked(vec![0, 3], 3),
            Err(ProbError::Label { index: 1, label: 3, k: 3 })
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        let p = ProbabilityMatrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        assert_eq!(p.argmax(), vec![0, 1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn row(k: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(1e-6f64..1.0, k).prop_map(|v| {
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect()
            })
        }

        proptest! {
            #[test]
            fn softmax_inverts_log_probs(rows in prop::collection::vec(row(4), 1..8)) {
                let p = ProbabilityMatrix::from_rows(&rows).unwrap();
                let back = softmax(log_probs(&p, LOGIT_EPS).view());
                for (a, b) in p.values().iter().zip(back.values().iter()) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }

            #[test]
            fn softmax_shift_invariant(z in prop::collection::vec(-50f64..50.0, 3), c in -500f64..500.0) {
                let a = softmax(Array2::from_shape_vec((1, 3), z.clone()).unwrap().view());
                let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
                let b = softmax(Array2::from_shape_vec((1, 3), shifted).unwrap().view());
                for (x, y) in a.values().iter().zip(b.values().iter()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            #[test]
            fn binary_logit_increasing(a in 1e-12f64..1.0, b in 1e-12f64..1.0) {
                prop_assume!(a < b && b <= 1.0 - 1e-12);
                prop_assert!(binary_logit(a, LOGIT_EPS) < binary_logit(b, LOGIT_EPS));
            }
        }
    }
}
