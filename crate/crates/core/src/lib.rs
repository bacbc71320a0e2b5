//! Train small clinical risk models and audit them: discrimination,
//! calibration, decision-curve net benefit, fairness, explanations, and
//! privacy (DP-SGD, federated averaging, membership-inference and evasion
//! attacks).

pub mod attacks;
pub mod calibration;
pub mod data;
pub mod dca;
pub mod error;
pub mod explain;
pub mod export;
pub mod fairness;
pub mod federated;
pub mod metrics;
pub mod models;
pub mod predictions;
pub mod privacy;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod validation;

pub use error::{AuditError, Result};
pub use scalar::Real;

/// Evaluation types at the two supported precisions.
pub type PredictionsF64 = predictions::PredictionSet<f64>;
pub type PredictionsF32 = predictions::PredictionSet<f32>;
pub type RocCurveF64 = metrics::RocCurve<f64>;
pub type RocCurveF32 = metrics::RocCurve<f32>;
pub type DecisionCurveF64 = dca::DecisionCurve<f64>;
pub type DecisionCurveF32 = dca::DecisionCurve<f32>;
pub type CalibrationReportF64 = calibration::CalibrationReport<f64>;
pub type CalibrationReportF32 = calibration::CalibrationReport<f32>;
pub type FairnessReportF64 = fairness::FairnessReport<f64>;
pub type FairnessReportF32 = fairness::FairnessReport<f32>;
