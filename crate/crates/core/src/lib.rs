//! Quickest detection of the earliest of `N` change points in correlated
//! Brownian observation channels.
//!
//! * [`math`]: closed forms, threshold matching and calibration.
//! * [`correlation`]: correlation models and their Cholesky factors.
//! * [`simulate`]: seeded Euler paths of the observation processes.
//! * [`detect`]: CUSUM statistics and the multichart stopping rule.
//! * [`montecarlo`]: replication harness and bound verification.
//! * [`fusion`]: decentralized sensors reporting one-shot alarms to a fusion center.
//! * [`config`]: run configuration for the command-line tool.

pub mod config;
pub mod correlation;
pub mod detect;
pub mod fusion;
pub mod math;
pub mod montecarlo;
pub mod report;
pub mod simulate;

pub use correlation::{CholeskyFactor, CorrMatrix, CorrelationModel};
pub use detect::{BarrierCorrection, CusumState, DetectionOutcome, Multichart};
pub use math::{BoundsPair, CalibrationTarget, CaseTag, ChannelDrift, DriftSpec, ThresholdVector};
pub use simulate::{ObservationStream, Scenario};
