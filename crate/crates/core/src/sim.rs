//! Scenario generator: waypoint trajectories in 3D projected into a pinhole
//! observer, with an IMU stream and noisy, provenance-annotated detections.

use nalgebra::{Point3, Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::consensus::{BroadcastEntry, InitBroadcast};
use crate::error::{MttError, Result};
use crate::geometry::{back_project, in_view, project, CameraIntrinsics, ObserverPose, PixelPoint};
use crate::tracker::{Measurement, MeasurementSet};

const LAYOUT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

const HOVER_S: f64 = 1.0;
const GAP_S: f64 = 0.5;
const STATIC_DURATION_S: f64 = 10.0;

fn default_imu_rate() -> f64 {
    100.0
}
fn default_detection_rate() -> f64 {
    7.0
}
fn default_speed_scale() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    2.0
}
fn default_detect_prob() -> f64 {
    1.0
}
fn default_accel_noise() -> f64 {
    1000.0
}

/// Detector corruption applied to every frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Expected number of uniform false positives per frame.
    #[serde(default)]
    pub clutter_count: f64,
    /// Additive Gaussian noise covariance as a fraction of the nominal
    /// measurement covariance.
    #[serde(default)]
    pub meas_noise_frac: f64,
    #[serde(default = "default_detect_prob")]
    pub detect_prob: f64,
    /// When two visible targets project closer than this, the deeper one
    /// produces no detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occlusion_radius_px: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            clutter_count: 0.0,
            meas_noise_frac: 0.0,
            detect_prob: 1.0,
            occlusion_radius_px: None,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clutter_count >= 0.0 && self.clutter_count.is_finite()) {
            return Err(MttError::InvalidConfig("noise.clutter_count must be >= 0".into()));
        }
        if !(self.meas_noise_frac >= 0.0 && self.meas_noise_frac.is_finite()) {
            return Err(MttError::InvalidConfig("noise.meas_noise_frac must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.detect_prob) {
            return Err(MttError::InvalidConfig("noise.detect_prob must be in [0, 1]".into()));
        }
        if matches!(self.occlusion_radius_px, Some(r) if !(r >= 0.0)) {
            return Err(MttError::InvalidConfig("noise.occlusion_radius_px must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    /// World-frame position in meters.
    pub position: [f64; 3],
}

/// Piecewise cubic Hermite path through timed waypoints. Interior tangents
/// follow Catmull-Rom, except next to a stationary segment where the tangent
/// is zero so hovering is exact. The path is clamped outside its time span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(MttError::InvalidConfig("trajectory needs at least one waypoint".into()));
        }
        if self.waypoints.iter().any(|w| !w.t.is_finite() || w.position.iter().any(|x| !x.is_finite())) {
            return Err(MttError::InvalidConfig("waypoints must be finite".into()));
        }
        if self.waypoints.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(MttError::InvalidConfig("waypoint times must be strictly increasing".into()));
        }
        Ok(())
    }

    fn point(&self, k: usize) -> Vector3<f64> {
        Vector3::from(self.waypoints[k].position)
    }

    fn tangent(&self, k: usize) -> Vector3<f64> {
        let n = self.waypoints.len();
        if k == 0 || k + 1 == n {
            return Vector3::zeros();
        }
        let (prev, here, next) = (self.point(k - 1), self.point(k), self.point(k + 1));
        if prev == here || here == next {
            return Vector3::zeros();
        }
        (next - prev) / (self.waypoints[k + 1].t - self.waypoints[k - 1].t)
    }

    pub fn position(&self, t: f64) -> Point3<f64> {
        let w = &self.waypoints;
        if t <= w[0].t {
            return Point3::from(self.point(0));
        }
        let last = w.len() - 1;
        if t >= w[last].t {
            return Point3::from(self.point(last));
        }
        let k = w.partition_point(|p| p.t <= t) - 1;
        if t == w[k].t || self.point(k) == self.point(k + 1) {
            return Point3::from(self.point(k));
        }
        let h = w[k + 1].t - w[k].t;
        let s = (t - w[k].t) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Point3::from(
            self.point(k) * h00 + self.tangent(k) * (h10 * h) + self.point(k + 1) * h01 + self.tangent(k + 1) * (h11 * h),
        )
    }
}

/// Observer placement. A nonzero angular velocity spins the camera at a
/// constant body rate, which the IMU reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    #[serde(default)]
    pub position: [f64; 3],
    /// World-to-camera rotation at t = 0 as a scaled axis, radians.
    #[serde(default)]
    pub orientation: [f64; 3],
    /// Body-frame angular velocity, rad/s.
    #[serde(default)]
    pub angular_velocity: [f64; 3],
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self { position: [0.0; 3], orientation: [0.0; 3], angular_velocity: [0.0; 3] }
    }
}

impl ObserverConfig {
    pub fn pose(&self, t: f64) -> ObserverPose {
        let omega = Vector3::from(self.angular_velocity);
        let r0 = Rotation3::from_scaled_axis(Vector3::from(self.orientation));
        ObserverPose {
            position: Vector3::from(self.position),
            orientation: Rotation3::from_scaled_axis(-omega * t) * r0,
            angular_velocity: omega,
        }
    }
}

/// Tracker-side settings that travel with a scenario so a run is fully
/// described by one file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingSettings {
    /// Acceleration noise intensity for the motion model.
    #[serde(default = "default_accel_noise")]
    pub accel_noise: f64,
    /// Detection probability assumed by the filters; derived from the noise
    /// settings when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_prob: Option<f64>,
    /// Expected clutter per frame assumed by the filters; derived from the
    /// noise settings when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clutter_rate: Option<f64>,
}

impl Default for TrackingSettings {
    fn default() -> Self {
        Self { accel_noise: default_accel_noise(), detection_prob: None, clutter_rate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_targets: usize,
    /// Seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_imu_rate")]
    pub imu_rate: f64,
    #[serde(default = "default_detection_rate")]
    pub detection_rate: f64,
    /// Scales target speed in the builtin crossing layout.
    #[serde(default = "default_speed_scale")]
    pub speed_scale: f64,
    /// Nominal per-axis detector standard deviation, pixels.
    #[serde(default = "default_sigma")]
    pub measurement_sigma_px: f64,
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub observer: ObserverConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub tracking: TrackingSettings,
    /// One per target; the builtin crossing layout is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<Vec<Trajectory>>,
}

impl ScenarioConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: Self = parse_toml(src)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MttError::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_targets == 0 {
            return Err(MttError::InvalidConfig("n_targets must be >= 1".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(MttError::InvalidConfig("duration must be > 0".into()));
        }
        if !(self.imu_rate > 0.0 && self.detection_rate > 0.0 && self.imu_rate.is_finite()) {
            return Err(MttError::InvalidConfig("rates must be > 0".into()));
        }
        if self.detection_rate > self.imu_rate {
            return Err(MttError::InvalidConfig("detection_rate must not exceed imu_rate".into()));
        }
        if !(self.speed_scale >= 0.0 && self.speed_scale.is_finite()) {
            return Err(MttError::InvalidConfig("speed_scale must be >= 0".into()));
        }
        if !(self.measurement_sigma_px > 0.0 && self.measurement_sigma_px.is_finite()) {
            return Err(MttError::InvalidConfig("measurement_sigma_px must be > 0".into()));
        }
        if !(self.tracking.accel_noise >= 0.0 && self.tracking.accel_noise.is_finite()) {
            return Err(MttError::InvalidConfig("tracking.accel_noise must be >= 0".into()));
        }
        self.intrinsics.validate()?;
        self.noise.validate()?;
        if let Some(tr) = &self.trajectories {
            if tr.len() != self.n_targets {
                return Err(MttError::InvalidConfig(format!(
                    "{} trajectories given for n_targets = {}",
                    tr.len(),
                    self.n_targets
                )));
            }
            tr.iter().try_for_each(Trajectory::validate)?;
        }
        Ok(())
    }

    /// Copy with explicit trajectories, expanding the builtin layout if needed.
    /// The configured duration is kept.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        if self.trajectories.is_some() {
            return Ok(self.clone());
        }
        let builtin = builtin_crossing_layout(self.n_targets, self.speed_scale, self.seed, self)?;
        Ok(Self { trajectories: builtin.trajectories, ..self.clone() })
    }

    pub fn observer_pose(&self, t: f64) -> ObserverPose {
        self.observer.pose(t)
    }

    /// Number of IMU ticks covering the duration (inclusive of t = 0).
    pub fn imu_ticks(&self) -> usize {
        (self.duration * self.imu_rate).floor() as usize + 1
    }

    /// IMU tick carrying detection frame `k`.
    pub fn frame_tick(&self, k: usize) -> usize {
        (k as f64 * self.imu_rate / self.detection_rate).round() as usize
    }

    pub fn tick_time(&self, tick: usize) -> f64 {
        tick as f64 / self.imu_rate
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        self.tick_time(self.frame_tick(k))
    }

    pub fn n_frames(&self) -> usize {
        let last = self.imu_ticks() - 1;
        (0..).take_while(|&k| self.frame_tick(k) <= last).count()
    }

    /// Initial 3D positions broadcast once for consensus, drone IDs = target index.
    pub fn broadcast(&self) -> Result<InitBroadcast> {
        let r = self.resolved()?;
        let tr = r.trajectories.as_ref().expect("resolved");
        InitBroadcast::new(
            tr.iter().enumerate().map(|(i, t)| BroadcastEntry::new(i as u32, t.position(0.0).coords)).collect(),
        )
    }
}

/// Deserializes TOML, reporting failures with 1-based line and column.
pub fn parse_toml<T: serde::de::DeserializeOwned>(src: &str) -> Result<T> {
    toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(src, s.start)).unwrap_or((0, 0));
        MttError::Parse { line, column, message: e.message().trim_end().to_string() }
    })
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Reproducible crossing layout: each target hovers on a circle around the
/// principal point; every pair of targets flies through the image centre
/// together, meeting exactly on a detection frame, and continues to the
/// diametrically opposite point. Pair events run one at a time in a seeded
/// order. With `speed_scale = 0` the scene is static and nothing crosses.
pub fn builtin_crossing_scenario(n_targets: usize, speed_scale: f64, seed: u64) -> Result<ScenarioConfig> {
    if n_targets < 2 {
        return Err(MttError::InvalidConfig("crossing scenario needs at least 2 targets".into()));
    }
    let base = ScenarioConfig {
        n_targets,
        duration: 1.0,
        seed,
        imu_rate: default_imu_rate(),
        detection_rate: default_detection_rate(),
        speed_scale,
        measurement_sigma_px: default_sigma(),
        intrinsics: CameraIntrinsics::default(),
        observer: ObserverConfig::default(),
        noise: NoiseConfig::default(),
        tracking: TrackingSettings::default(),
        trajectories: None,
    };
    builtin_crossing_layout(n_targets, speed_scale, seed, &base)
}

/// Builds the crossing layout for `base`'s camera and timing; the returned
/// duration covers the full schedule.
fn builtin_crossing_layout(n: usize, speed_scale: f64, seed: u64, base: &ScenarioConfig) -> Result<ScenarioConfig> {
    let k = &base.intrinsics;
    let pose = base.observer_pose(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LAYOUT_STREAM);

    let radius = 150.0_f64.min(0.4 * f64::from(k.image_width.min(k.image_height)));
    let step = std::f64::consts::PI / n as f64;
    let centre = PixelPoint::new(k.cu(), k.cv());
    let mut homes = Vec::with_capacity(n);
    for i in 0..n {
        let alpha = i as f64 * step + rng.random_range(-0.25..0.25) * step;
        let depth = 6.0 + rng.random_range(-0.5..0.5);
        let px = PixelPoint::new(centre.u + radius * alpha.cos(), centre.v + radius * alpha.sin());
        let home = back_project(&px, depth, &pose, k).coords;
        let mid = back_project(&centre, depth, &pose, k).coords;
        homes.push((home, mid));
    }
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    pairs.shuffle(&mut rng);

    let mut waypoints: Vec<Vec<Waypoint>> =
        homes.iter().map(|(h, _)| vec![Waypoint { t: 0.0, position: (*h).into() }]).collect();
    let mut current: Vec<Vector3<f64>> = homes.iter().map(|(h, _)| *h).collect();

    let duration = if speed_scale == 0.0 {
        STATIC_DURATION_S
    } else {
        let speed = 1.0 * speed_scale;
        let mut cursor = HOVER_S;
        for &(i, j) in &pairs {
            let reach = |d: usize| (homes[d].0 - homes[d].1).norm();
            let tau = 4.0 / 3.0 * reach(i).max(reach(j)) / speed;
            // Snap the meeting instant onto a detection frame.
            let first = (0..).find(|&f| base.frame_time(f) >= cursor + tau).expect("unbounded search");
            let t_cross = base.frame_time(first);
            let start = t_cross - tau;
            let end = t_cross + tau;
            for d in [i, j] {
                let (_, mid) = homes[d];
                let from = current[d];
                let to = mid * 2.0 - from;
                let w = &mut waypoints[d];
                if start > w.last().expect("nonempty").t {
                    w.push(Waypoint { t: start, position: from.into() });
                }
                w.push(Waypoint { t: t_cross, position: mid.into() });
                w.push(Waypoint { t: end, position: to.into() });
                current[d] = to;
            }
            cursor = end + GAP_S;
        }
        cursor - GAP_S + HOVER_S
    };
    for (w, c) in waypoints.iter_mut().zip(&current) {
        if duration > w.last().expect("nonempty").t {
            w.push(Waypoint { t: duration, position: (*c).into() });
        }
    }
    Ok(ScenarioConfig {
        n_targets: n,
        duration,
        trajectories: Some(waypoints.into_iter().map(|waypoints| Trajectory { waypoints }).collect()),
        ..base.clone()
    })
}

/// Origin of a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Target(usize),
    Clutter,
}

/// Ground truth for one target at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthPoint {
    /// `None` when the target is behind the camera.
    pub pixel: Option<PixelPoint>,
    /// Camera-frame depth, meters.
    pub depth: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub frame: usize,
    pub time: f64,
    /// Indexed by target.
    pub truth: Vec<TruthPoint>,
    pub measurements: MeasurementSet,
    /// Parallel to `measurements.detections`.
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub time: f64,
    pub angular_velocity: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    Imu(ImuSample),
    /// Follows the IMU sample of the same tick.
    Frame(GroundTruthFrame),
}

/// True projections of all targets at time `t`.
pub fn truth_at(cfg: &ScenarioConfig, t: f64) -> Vec<TruthPoint> {
    let pose = cfg.observer_pose(t);
    let tr = cfg.trajectories.as_ref().expect("resolved config");
    tr.iter()
        .map(|traj| {
            let world = traj.position(t);
            let depth = pose.to_camera(&world).z;
            let pixel = project(&world, &pose, &cfg.intrinsics).ok();
            TruthPoint { pixel, depth, visible: pixel.is_some_and(|p| in_view(&p, &cfg.intrinsics)) }
        })
        .collect()
}

/// Produces the full, deterministic event stream for a scenario.
pub fn generate(config: &ScenarioConfig) -> Result<Vec<SimEvent>> {
    let cfg = config.resolved()?;
    let noise = cfg.noise;
    let k = cfg.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(NOISE_STREAM);

    let sigma = cfg.measurement_sigma_px * noise.meas_noise_frac.sqrt();
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let detect = Bernoulli::new(noise.detect_prob).map_err(|e| MttError::InvalidConfig(e.to_string()))?;
    let clutter = if noise.clutter_count > 0.0 {
        Some(Poisson::new(noise.clutter_count).map_err(|e| MttError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let omega = Vector3::from(cfg.observer.angular_velocity);

    let mut events = Vec::new();
    let mut ever_seen = vec![false; cfg.n_targets];
    let mut next_frame = 0;
    for tick in 0..cfg.imu_ticks() {
        let time = cfg.tick_time(tick);
        events.push(SimEvent::Imu(ImuSample { time, angular_velocity: omega }));
        if cfg.frame_tick(next_frame) != tick {
            continue;
        }
        let truth = truth_at(&cfg, time);

        let mut detections = Vec::new();
        let mut provenance = Vec::new();
        for (i, tp) in truth.iter().enumerate() {
            let hit = detect.sample(&mut rng);
            let (nu, nv): (f64, f64) = (gauss.sample(&mut rng), gauss.sample(&mut rng));
            if !tp.visible {
                continue;
            }
            ever_seen[i] = true;
            let occluded = noise.occlusion_radius_px.is_some_and(|r| {
                let p = tp.pixel.expect("visible");
                truth.iter().enumerate().any(|(j, other)| {
                    j != i
                        && other.visible
                        && other.pixel.expect("visible").distance(&p) < r
                        && (other.depth, j) < (tp.depth, i)
                })
            });
            if hit && !occluded {
                let p = tp.pixel.expect("visible");
                detections.push(Measurement::new(p.u + sigma * nu, p.v + sigma * nv));
                provenance.push(Provenance::Target(i));
            }
        }
        let n_clutter = clutter.map_or(0, |c| c.sample(&mut rng) as usize);
        for _ in 0..n_clutter {
            let u = rng.random_range(0.0..f64::from(k.image_width));
            let v = rng.random_range(0.0..f64::from(k.image_height));
            detections.push(Measurement::new(u, v));
            provenance.push(Provenance::Clutter);
        }
        let mut order: Vec<usize> = (0..detections.len()).collect();
        order.shuffle(&mut rng);
        let measurements = MeasurementSet::new(time, order.iter().map(|&o| detections[o]).collect());
        let provenance = order.iter().map(|&o| provenance[o]).collect();

        events.push(SimEvent::Frame(GroundTruthFrame { frame: next_frame, time, truth, measurements, provenance }));
        next_frame += 1;
    }
    if let Some(i) = ever_seen.iter().position(|s| !s) {
        return Err(MttError::Scenario(format!("target {i} is never in view")));
    }
    Ok(events)
}

/// Detection frames only.
pub fn frames(events: &[SimEvent]) -> impl Iterator<Item = &GroundTruthFrame> {
    events.iter().filter_map(|e| match e {
        SimEvent::Frame(f) => Some(f),
        SimEvent::Imu(_) => None,
    })
}
