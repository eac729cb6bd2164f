//! Name-addressable calibrators behind a single fit / predict-proba protocol.

use std::fmt;

use thiserror::Error;

use crate::binary::{fit_binary, BinaryCalibrator, BinaryError, BinaryMethod, FitFlag};
use crate::multiclass::{fit_multiclass, MulticlassCalibrator, MulticlassError, MulticlassMethod};
use crate::prob::{ProbabilityMatrix, Task};

/// Name of the identity calibrator reported alongside every method.
pub const BASE_MODEL: &str = "Base-model";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("calibrator used before fit")]
    NotFitted,
    #[error("unknown calibrator `{name}` for {task} tasks")]
    UnknownMethod { name: String, task: Task },
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Binary(#[from] BinaryError),
    #[error(transparent)]
    Multiclass(#[from] MulticlassError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CalibratorKind {
    Identity,
    Binary(BinaryMethod),
    Multiclass(MulticlassMethod),
}

impl CalibratorKind {
    pub fn name(self) -> String {
        match self {
            CalibratorKind::Identity => BASE_MODEL.to_string(),
            CalibratorKind::Binary(m) => m.name().to_string(),
            CalibratorKind::Multiclass(m) => m.name(),
        }
    }

    /// Looks a method up by name. On binary tasks binary methods take precedence and
    /// native multiclass ones (e.g. `VS`) run on the two columns; on multiclass tasks
    /// binary names resolve to their one-vs-rest wrapper.
    pub fn resolve(name: &str, task: Task) -> Result<Self, CalibrationError> {
        if name.eq_ignore_ascii_case(BASE_MODEL) {
            return Ok(CalibratorKind::Identity);
        }
        let unknown = || CalibrationError::UnknownMethod { name: name.to_string(), task };
        match task {
            Task::Binary => {
                if let Ok(m) = name.parse::<BinaryMethod>() {
                    return Ok(CalibratorKind::Binary(m));
                }
                match name.parse::<MulticlassMethod>() {
                    Ok(MulticlassMethod::OneVsRest(_)) | Err(_) => Err(unknown()),
                    Ok(m) => Ok(CalibratorKind::Multiclass(m)),
                }
            }
            Task::Multiclass => name
                .parse::<MulticlassMethod>()
                .map(CalibratorKind::Multiclass)
                .map_err(|_| unknown()),
        }
    }

    /// The default method list for a task, identity first.
    pub fn catalog(task: Task) -> Vec<Self> {
        let mut out = vec![CalibratorKind::Identity];
        match task {
            Task::Binary => out.extend(BinaryMethod::ALL.map(CalibratorKind::Binary)),
            Task::Multiclass => {
                out.extend(MulticlassMethod::catalog().into_iter().map(CalibratorKind::Multiclass))
            }
        }
        out
    }
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Identity(usize),
    Binary(BinaryCalibrator),
    Multiclass(MulticlassCalibrator),
}

/// A calibrator that is fitted once on calibration predictions and then applied to new ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrator {
    kind: CalibratorKind,
    seed: u64,
    fitted: Option<Fitted>,
}

impl Calibrator {
    pub fn new(kind: CalibratorKind, seed: u64) -> Self {
        Self { kind, seed, fitted: None }
    }

    pub fn kind(&self) -> CalibratorKind {
        self.kind
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn fit(&mut self, p_cal: &ProbabilityMatrix, y_cal: &[u32]) -> Result<&mut Self, CalibrationError> {
        if p_cal.n() != y_cal.len() {
            return Err(CalibrationError::Shape(format!("{} rows but {} labels", p_cal.n(), y_cal.len())));
        }
        let fitted = match self.kind {
            CalibratorKind::Identity => Fitted::Identity(p_cal.k()),
            CalibratorKind::Binary(m) => {
                if p_cal.k() != 2 {
                    return Err(CalibrationError::Shape(format!("{m} needs K=2, got K={}", p_cal.k())));
                }
                Fitted::Binary(fit_binary(m, &p_cal.positive(), y_cal, self.seed)?)
            }
            CalibratorKind::Multiclass(m) => Fitted::Multiclass(fit_multiclass(m, p_cal, y_cal, self.seed)?),
        };
        self.fitted = Some(fitted);
        Ok(self)
    }

    /// Calibrated probabilities and any flags raised while producing them.
    pub fn predict_proba_flagged(
        &self,
        p: &ProbabilityMatrix,
    ) -> Result<(ProbabilityMatrix, Vec<FitFlag>), CalibrationError> {
        let fitted = self.fitted.as_ref().ok_or(CalibrationError::NotFitted)?;
        let expected = match fitted {
            Fitted::Identity(k) => *k,
            Fitted::Binary(_) => 2,
            Fitted::Multiclass(c) => c.k,
        };
        if p.k() != expected {
            return Err(CalibrationError::Shape(format!("fitted for K={expected}, got K={}", p.k())));
        }
        Ok(match fitted {
            Fitted::Identity(_) => (p.clone(), Vec::new()),
            Fitted::Binary(c) => {
                let q = c.apply(&p.positive());
                (ProbabilityMatrix::from_positive(&q).map_err(|e| CalibrationError::Shape(e.to_string()))?, Vec::new())
            }
            Fitted::Multiclass(c) => c.apply(p)?,
        })
    }

    pub fn predict_proba(&self, p: &ProbabilityMatrix) -> Result<ProbabilityMatrix, CalibrationError> {
        Ok(self.predict_proba_flagged(p)?.0)
    }

    /// Conditions recorded at fit time.
    pub fn flags(&self) -> Vec<FitFlag> {
        match &self.fitted {
            Some(Fitted::Binary(c)) => c.flags.clone(),
            Some(Fitted::Multiclass(c)) => c.flags.clone(),
            _ => Vec::new(),
        }
    }

    /// Whether the fitted binary map is guaranteed non-decreasing.
    pub fn monotone(&self) -> Option<bool> {
        match &self.fitted {
            Some(Fitted::Identity(_)) => Some(true),
            Some(Fitted::Binary(c)) => Some(c.monotone),
            _ => None,
        }
    }

    pub fn binary(&self) -> Option<&BinaryCalibrator> {
        match &self.fitted {
            Some(Fitted::Binary(c)) => Some(c),
            _ => None,
        }
    }

    pub fn multiclass(&self) -> Option<&MulticlassCalibrator> {
        match &self.fitted {
            Some(Fitted::Multiclass(c)) => Some(c),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_data() -> (ProbabilityMatrix, Vec<u32>) {
        let p: Vec<f64> = (0..40).map(|i| 0.05 + 0.9 * i as f64 / 39.0).collect();
        let y: Vec<u32> = (0..40).map(|i| u32::from(i % 3 != 0 && i > 8)).collect();
        (ProbabilityMatrix::from_positive(&p).unwrap(), y)
    }

    #[test]
    fn predict_before_fit_fails() {
        let (p, _) = binary_data();
        let c = Calibrator::new(CalibratorKind::Binary(BinaryMethod::Isotonic), 0);
        assert_eq!(c.predict_proba(&p), Err(CalibrationError::NotFitted));
    }

    #[test]
    fn identity_returns_input() {
        let (p, y) = binary_data();
        let mut c = Calibrator::new(CalibratorKind::Identity, 0);
        c.fit(&p, &y).unwrap();
        assert_eq!(c.predict_proba(&p).unwrap(), p);
    }

    #[test]
    fn resolve_by_task() {
        use CalibratorKind as C;
        assert_eq!(C::resolve("base-model", Task::Binary).unwrap(), C::Identity);
        assert_eq!(C::resolve("TS", Task::Binary).unwrap(), C::Binary(BinaryMethod::Temperature));
        assert_eq!(C::resolve("TS", Task::Multiclass).unwrap(), C::Multiclass(MulticlassMethod::Temperature));
        assert_eq!(C::resolve("VS", Task::Binary).unwrap(), C::Multiclass(MulticlassMethod::VectorScaling));
        assert_eq!(
            C::resolve("Isotonic", Task::Multiclass).unwrap(),
            C::Multiclass(MulticlassMethod::OneVsRest(BinaryMethod::Isotonic))
        );
        assert!(matches!(C::resolve("Nope", Task::Binary), Err(CalibrationError::UnknownMethod { .. })));
        for task in [Task::Binary, Task::Multiclass] {
            for kind in C::catalog(task) {
                assert_eq!(C::resolve(&kind.name(), task).unwrap(), kind);
            }
        }
    }

    #[test]
    fn binary_methods_need_two_classes() {
        let p = ProbabilityMatrix::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        let mut c = Calibrator::new(CalibratorKind::Binary(BinaryMethod::Isotonic), 0);
        assert!(matches!(c.fit(&p, &[0]), Err(CalibrationError::Shape(_))));
    }

    #[test]
    fn apply_rejects_other_class_counts() {
        let (p, y) = binary_data();
        let mut c = Calibrator::new(CalibratorKind::Multiclass(MulticlassMethod::Temperature), 0);
        c.fit(&p, &y).unwrap();
        let three = ProbabilityMatrix::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        assert!(matches!(c.predict_proba(&three), Err(CalibrationError::Shape(_))));
    }
}
