//! Common contract for the three filters.
//!
//! Trackers predict at IMU rate and update at detection rate; any number of
//! `predict_step` calls may precede an `update_step`.

use std::time::Instant;

use nalgebra::{Matrix2, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};
use crate::geometry::PixelPoint;
use crate::gmphd::{BirthModel, GmPhdTracker};
use crate::jpdaf::JpdafTracker;
use crate::kalman::KalmanTracker;
use crate::linalg::{check_psd, is_spd2};
use crate::motion::{ModelParams, StateCovariance, TrackState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub point: PixelPoint,
}

impl Measurement {
    pub fn new(u: f64, v: f64) -> Self {
        Self { point: PixelPoint::new(u, v) }
    }
}

/// Detections for one frame. Order carries no meaning.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub frame_time: f64,
    pub detections: Vec<Measurement>,
}

impl MeasurementSet {
    pub fn new(frame_time: f64, detections: Vec<Measurement>) -> Self {
        Self { frame_time, detections }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEstimate {
    pub local_track_index: usize,
    pub state: TrackState,
    pub covariance: Option<StateCovariance>,
}

impl TrackEstimate {
    pub fn position(&self) -> PixelPoint {
        self.state.position()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Kalman,
    Jpdaf,
    Gmphd,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Kalman, FilterKind::Jpdaf, FilterKind::Gmphd];

    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Kalman => "kalman",
            FilterKind::Jpdaf => "jpdaf",
            FilterKind::Gmphd => "gmphd",
        }
    }

    /// Chi-square validation gate used when none is configured explicitly.
    /// Only the JPDAF gates; the Kalman baseline runs ungated and the GM-PHD
    /// corrector evaluates every component/measurement pair.
    pub fn default_gate(&self) -> Option<f64> {
        match self {
            FilterKind::Jpdaf => Some(CHI2_2DOF_99),
            FilterKind::Kalman | FilterKind::Gmphd => None,
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FilterKind {
    type Err = MttError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kalman" | "kf" => Ok(FilterKind::Kalman),
            "jpdaf" => Ok(FilterKind::Jpdaf),
            "gmphd" | "phd" => Ok(FilterKind::Gmphd),
            other => Err(MttError::InvalidConfig(format!("unknown filter '{other}'"))),
        }
    }
}

/// 99% quantile of the chi-square distribution with two degrees of freedom.
pub const CHI2_2DOF_99: f64 = 9.210340371976184;

/// GM-PHD specific tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhdSettings {
    pub max_components: usize,
    pub extraction_threshold: f64,
    /// Measurements whose summed detection weight stays below this value
    /// seed birth components on the next prediction.
    pub birth_responsibility_threshold: f64,
    pub birth: BirthModel,
    /// Maximum pixel distance for carrying a label from one frame to the next.
    pub label_distance_cap: f64,
    /// How long a label that stopped being extracted stays claimable, seconds.
    pub label_memory_s: f64,
}

impl Default for PhdSettings {
    fn default() -> Self {
        Self {
            max_components: 100,
            extraction_threshold: 0.5,
            birth_responsibility_threshold: 0.1,
            birth: BirthModel::default(),
            label_distance_cap: 30.0,
            label_memory_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub model: ModelParams,
    pub measurement_noise: Matrix2<f64>,
    pub detection_prob: f64,
    /// Expected clutter detections per frame, spread uniformly over the image.
    pub clutter_rate: f64,
    pub survival_prob: f64,
    pub truncation_threshold: f64,
    /// Squared Mahalanobis distance below which GM-PHD components merge.
    pub merge_threshold: f64,
    /// Chi-square gate on the squared innovation distance; `None` disables gating.
    pub gate_threshold: Option<f64>,
    pub phd: PhdSettings,
}

impl TrackerConfig {
    pub fn new(model: ModelParams, measurement_noise: Matrix2<f64>) -> Self {
        Self {
            model,
            measurement_noise,
            detection_prob: 0.97,
            clutter_rate: 1.0,
            survival_prob: 1.0,
            truncation_threshold: 1e-5,
            merge_threshold: 4.0,
            gate_threshold: None,
            phd: PhdSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !is_spd2(&self.measurement_noise) {
            return Err(MttError::InvalidConfig(
                "measurement_noise must be symmetric positive definite".into(),
            ));
        }
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.detection_prob) {
            return Err(MttError::InvalidConfig("detection_prob must be in (0, 1]".into()));
        }
        if !unit(self.survival_prob) {
            return Err(MttError::InvalidConfig("survival_prob must be in (0, 1]".into()));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(MttError::InvalidConfig("clutter_rate must be >= 0".into()));
        }
        if !(self.truncation_threshold >= 0.0) || !(self.merge_threshold >= 0.0) {
            return Err(MttError::InvalidConfig("thresholds must be >= 0".into()));
        }
        if matches!(self.gate_threshold, Some(g) if !(g > 0.0)) {
            return Err(MttError::InvalidConfig("gate_threshold must be > 0".into()));
        }
        if !(self.phd.birth.weight > 0.0) {
            return Err(MttError::InvalidConfig("birth weight must be > 0".into()));
        }
        check_psd(&self.phd.birth.covariance)?;
        Ok(())
    }

    /// Uniform clutter density over the image, per square pixel.
    pub fn clutter_density(&self) -> f64 {
        self.clutter_rate / self.model.intrinsics.area()
    }
}

/// Default prior covariance for a freshly initialised track.
pub fn default_initial_covariance() -> Matrix4<f64> {
    Matrix4::from_diagonal(&nalgebra::Vector4::new(100.0, 25.0, 100.0, 25.0))
}

pub trait Tracker: Send {
    fn kind(&self) -> FilterKind;

    /// Propagates every live track or component by `dt` seconds.
    fn predict_step(&mut self, omega: &Vector3<f64>, dt: f64) -> Result<()>;

    /// Associates and corrects with one frame of detections.
    fn update_step(&mut self, z: &MeasurementSet) -> Result<Vec<TrackEstimate>>;

    fn estimates(&self) -> Vec<TrackEstimate>;

    /// Aborts long association work with `MttError::Timeout` past the deadline.
    fn set_deadline(&mut self, _deadline: Option<Instant>) {}
}

/// Builds a tracker of the requested kind with the given priors.
pub fn initialize(
    kind: FilterKind,
    config: TrackerConfig,
    initial_tracks: &[(TrackState, Matrix4<f64>)],
) -> Result<Box<dyn Tracker>> {
    config.validate()?;
    for (state, cov) in initial_tracks {
        if !state.is_finite() {
            return Err(MttError::InvalidConfig("non-finite initial state".into()));
        }
        check_psd(cov)?;
    }
    Ok(match kind {
        FilterKind::Kalman => Box::new(KalmanTracker::new(config, initial_tracks)?),
        FilterKind::Jpdaf => Box::new(JpdafTracker::new(config, initial_tracks)?),
        FilterKind::Gmphd => Box::new(GmPhdTracker::new(config, initial_tracks)?),
    })
}

/// Time bookkeeping shared by the tracker implementations.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Clock {
    pub last_frame: Option<f64>,
    pub predicted_since_update: bool,
}

impl Clock {
    pub fn on_predict(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(MttError::InvalidConfig("predict dt must be > 0".into()));
        }
        self.predicted_since_update = true;
        Ok(())
    }

    pub fn on_update(&mut self, z: &MeasurementSet) -> Result<()> {
        if let Some(prev) = self.last_frame {
            if !(z.frame_time > prev) {
                return Err(MttError::InvalidConfig(format!(
                    "frame time {} does not advance past {}",
                    z.frame_time, prev
                )));
            }
        }
        if z.detections.iter().any(|m| !m.point.is_finite()) {
            return Err(MttError::InvalidConfig("non-finite measurement".into()));
        }
        self.last_frame = Some(z.frame_time);
        self.predicted_since_update = false;
        Ok(())
    }
}
