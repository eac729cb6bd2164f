//! Post-hoc probability calibration: calibrators, proper-score metrics and
//! leaderboard statistics for benchmarking them.

pub mod binary;
pub mod calibrator;
pub mod io;
pub mod isotonic;
pub mod metrics;
pub mod multiclass;
pub mod optim;
pub mod prob;
pub mod scalar;
pub mod special;
pub mod stats;
pub mod spline;

pub use prob::{Experiment, LabelVector, ProbError, ProbabilityMatrix, Task};
pub use scalar::Scalar;

/// Double-precision probability matrix.
pub type ProbMatrix = ProbabilityMatrix<f64>;
/// Single-precision probability matrix.
pub type ProbMatrix32 = ProbabilityMatrix<f32>;

pub use calibrator::{Calibrator, CalibratorKind, CalibrationError, BASE_MODEL};
