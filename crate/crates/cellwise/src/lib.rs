//! Battery SOC/SOH estimation toolkit.
//!
//! Joint estimation for lithium-ion cells on a 1RC equivalent circuit:
//! recursive least-squares parameter identification with per-parameter
//! (diagonal) forgetting, an extended Kalman filter for the state, and
//! two adaptation mechanisms that tie them together — a binary
//! excitation tag gating identification, parameter hand-off and process
//! noise, and a condition-number-driven auto-tuner for the first
//! forgetting factor. Baseline estimators (Coulomb counting, a
//! fixed-parameter single EKF, decoupled scalar-forgetting channels) and
//! a synthetic ground-truth simulator round out the comparison harness.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root pin `f64`, which the CLI and the experiment
//! harness use throughout.

// `!(x > 0)` style guards are load-bearing here: the negation rejects
// NaN, which `x <= 0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Indexed loops over the fixed-size kernels mirror the matrix algebra.
#![allow(clippy::needless_range_loop)]

pub mod adaptive;
pub mod ekf;
pub mod experiment;
pub mod joint;
pub mod linalg;
pub mod model;
pub mod rls;
pub mod scalar;

pub use scalar::Scalar;

/// `f64` aliases for the main types.
pub type Ecm = model::EcmParams<f64>;
pub type Ocv = model::OcvCurve<f64>;
pub type Cell = model::CellState<f64>;
pub type Profile = model::DriveProfile<f64>;
pub type Truth = model::TruthTrace<f64>;
pub type Noise = model::NoiseConfig<f64>;
pub type DffRls = rls::DffRlsState<f64>;
pub type MffRls = rls::MffRlsState<f64>;
pub type Forgetting = rls::ForgettingMatrix<f64>;
pub type Ekf = ekf::EkfState<f64>;
pub type EkfCellModel = ekf::EkfModel<f64>;
pub type Joint = joint::JointState<f64>;
pub type JointSettings = joint::JointConfig<f64>;
pub type Trace = joint::EstimateTrace<f64>;
pub type Report = joint::ErrorReport<f64>;
