//! Image-plane multi-target tracking for drones observed by an onboard camera.
//!
//! Three filters share one constant-velocity pixel model with IMU rotation
//! compensation: a Kalman filter with greedy maximum-likelihood association
//! ([`kalman`]), a joint probabilistic data association filter ([`jpdaf`]) and
//! a Gaussian-mixture PHD filter ([`gmphd`]). [`consensus`] maps local tracks
//! to fleet-wide drone IDs, [`sim`] generates seeded scenarios, and
//! [`harness`], [`metrics`], [`study`] and [`scaling`] run and score them.

// `!(x >= 0.0)` is how config validation rejects NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod consensus;
pub mod error;
pub mod geometry;
pub mod gmphd;
pub mod harness;
pub mod jpdaf;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod motion;
pub mod scaling;
pub mod sim;
pub mod study;
pub mod tracker;

pub use nalgebra;

pub use consensus::{assign_ids, reassign_on_reset, BroadcastEntry, GlobalAssignment, InitBroadcast};
pub use error::{MttError, Result};
pub use geometry::{project, BehindCamera, CameraIntrinsics, ObserverPose, PixelPoint};
pub use gmphd::{GaussianComponent, GmPhdTracker, Intensity};
pub use harness::{run_tracking, RunOutput, RunRow};
pub use jpdaf::JpdafTracker;
pub use kalman::KalmanTracker;
pub use metrics::{compute_rmse, RunMetrics};
pub use motion::{ModelParams, StateGaussian, TrackState};
pub use scaling::{run_benchmark, BenchOptions, BenchTarget, ScalingReport};
pub use sim::{builtin_crossing_scenario, generate, GroundTruthFrame, NoiseConfig, ScenarioConfig, SimEvent};
pub use study::{ConsensusStudy, NoiseAxis, ScenarioSource, StudyPlan, SummaryRow};
pub use tracker::{initialize, FilterKind, Measurement, MeasurementSet, TrackEstimate, Tracker, TrackerConfig};
