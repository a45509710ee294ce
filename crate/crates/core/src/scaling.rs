//! Wall-clock scaling sweeps: mean association+update time per frame as a
//! function of the number of targets.

use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Vector3};
use serde::Serialize;

use crate::error::{MttError, Result};
use crate::harness::tracker_config_for;
use crate::motion::TrackState;
use crate::sim::{frames, generate, ScenarioConfig, SimEvent};
use crate::tracker::{default_initial_covariance, initialize, FilterKind, MeasurementSet, TrackEstimate, Tracker};

pub const DEFAULT_POINT_TIMEOUT: Duration = Duration::from_secs(60);

/// Largest JPDAF problem attempted unless overridden; exhaustive event
/// enumeration grows factorially beyond it.
pub const JPDAF_MAX_TARGETS: usize = 8;

/// What is being timed: one of the filters, or an empty tracker that only
/// exercises the surrounding loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchTarget {
    Filter(FilterKind),
    Null,
}

impl BenchTarget {
    pub fn name(&self) -> &'static str {
        match self {
            BenchTarget::Filter(k) => k.name(),
            BenchTarget::Null => "null",
        }
    }
}

impl From<FilterKind> for BenchTarget {
    fn from(k: FilterKind) -> Self {
        BenchTarget::Filter(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Measured,
    /// The per-point timeout expired; the point carries no time.
    TimedOut,
    /// Above the size cap for this filter; not attempted.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub n_targets: usize,
    pub status: PointStatus,
    /// Mean seconds per association+update call, over every frame of every repetition.
    pub mean_s: Option<f64>,
    pub median_s: Option<f64>,
    pub repetitions: usize,
}

impl ScalingPoint {
    pub fn censored(&self) -> bool {
        self.status != PointStatus::Measured
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub target: BenchTarget,
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of ln(mean time) against ln(N) over measured points.
    pub slope: Option<f64>,
    /// Slopes between consecutive measured points; increasing values mean
    /// upward curvature on the log-log plot.
    pub segment_slopes: Vec<f64>,
}

impl ScalingReport {
    pub fn mean_at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|p| p.n_targets == n).and_then(|p| p.mean_s)
    }

    pub fn curvature_increasing(&self) -> bool {
        self.segment_slopes.len() >= 2 && self.segment_slopes.windows(2).all(|w| w[1] > w[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub point_timeout: Duration,
    /// Size cap for the JPDAF; larger points are reported as skipped.
    pub jpdaf_max_targets: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { point_timeout: DEFAULT_POINT_TIMEOUT, jpdaf_max_targets: JPDAF_MAX_TARGETS }
    }
}

/// Template for sweeps: the builtin crossing layout at zero noise, shortened
/// to `duration` seconds.
pub fn scaling_template(duration: f64) -> ScenarioConfig {
    let mut cfg = crate::sim::builtin_crossing_scenario(2, 1.0, 0).expect("n = 2 is valid");
    cfg.duration = duration;
    cfg.trajectories = None;
    cfg
}

/// Times `target` over each `n_targets` value. Scenarios are generated
/// before timing starts; only the association+update call is on the clock.
/// Every filter runs ungated so the timing reflects its full association work.
pub fn run_benchmark(
    target: BenchTarget,
    n_targets: &[usize],
    template: &ScenarioConfig,
    repetitions: usize,
    seed: u64,
    options: &BenchOptions,
) -> Result<ScalingReport> {
    if repetitions < 3 {
        return Err(MttError::InvalidConfig("repetitions must be >= 3".into()));
    }
    if n_targets.is_empty() || n_targets.windows(2).any(|w| w[1] <= w[0]) || n_targets[0] == 0 {
        return Err(MttError::InvalidConfig("n_targets must be positive and strictly increasing".into()));
    }
    let mut points = Vec::with_capacity(n_targets.len());
    for &n in n_targets {
        if target == BenchTarget::Filter(FilterKind::Jpdaf) && n > options.jpdaf_max_targets {
            points.push(ScalingPoint { n_targets: n, status: PointStatus::Skipped, mean_s: None, median_s: None, repetitions: 0 });
            continue;
        }
        points.push(time_point(target, n, template, repetitions, seed, options.point_timeout)?);
    }
    let measured: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.mean_s.map(|t| ((p.n_targets as f64).ln(), t.ln())))
        .collect();
    let segment_slopes = measured.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    Ok(ScalingReport { target, points, slope: fit_slope(&measured), segment_slopes })
}

fn time_point(
    target: BenchTarget,
    n: usize,
    template: &ScenarioConfig,
    repetitions: usize,
    seed: u64,
    timeout: Duration,
) -> Result<ScalingPoint> {
    let deadline = Instant::now() + timeout;
    let mut samples = Vec::new();
    for rep in 0..repetitions {
        let mut cfg = template.clone();
        cfg.n_targets = n;
        cfg.trajectories = None;
        cfg.seed = seed.wrapping_add(rep as u64);
        let cfg = cfg.resolved()?;
        let events = generate(&cfg)?;
        match time_run(target, &cfg, &events, deadline) {
            Ok(t) => samples.extend(t),
            Err(MttError::Timeout) => {
                return Ok(ScalingPoint { n_targets: n, status: PointStatus::TimedOut, mean_s: None, median_s: None, repetitions: rep })
            }
            Err(e) => return Err(e),
        }
        if Instant::now() > deadline {
            return Ok(ScalingPoint { n_targets: n, status: PointStatus::TimedOut, mean_s: None, median_s: None, repetitions: rep + 1 });
        }
    }
    Ok(ScalingPoint {
        n_targets: n,
        status: PointStatus::Measured,
        mean_s: Some(samples.iter().sum::<f64>() / samples.len() as f64),
        median_s: Some(median(&mut samples)),
        repetitions,
    })
}

/// Per-frame update times for one run.
fn time_run(target: BenchTarget, cfg: &ScenarioConfig, events: &[SimEvent], deadline: Instant) -> Result<Vec<f64>> {
    let first = frames(events).next().ok_or_else(|| MttError::Scenario("scenario has no detection frames".into()))?;
    let priors: Vec<(TrackState, Matrix4<f64>)> = first
        .truth
        .iter()
        .filter_map(|t| t.pixel.map(|p| (TrackState::at_rest(p), default_initial_covariance())))
        .collect();
    let mut tracker: Box<dyn Tracker> = match target {
        BenchTarget::Filter(kind) => {
            let mut tc = tracker_config_for(cfg, kind)?;
            tc.gate_threshold = None;
            initialize(kind, tc, &priors)?
        }
        BenchTarget::Null => Box::new(NullTracker),
    };
    tracker.set_deadline(Some(deadline));

    let mut times = Vec::new();
    let mut last_time = 0.0;
    let mut omega = Vector3::zeros();
    for event in events {
        match event {
            SimEvent::Imu(s) => {
                if s.time > last_time {
                    tracker.predict_step(&omega, s.time - last_time)?;
                    last_time = s.time;
                }
                omega = s.angular_velocity;
            }
            SimEvent::Frame(f) => {
                let start = Instant::now();
                tracker.update_step(&f.measurements)?;
                times.push(start.elapsed().as_secs_f64());
            }
        }
    }
    Ok(times)
}

/// Does nothing; times the bare measurement loop.
struct NullTracker;

impl Tracker for NullTracker {
    fn kind(&self) -> FilterKind {
        FilterKind::Kalman
    }

    fn predict_step(&mut self, _omega: &Vector3<f64>, _dt: f64) -> Result<()> {
        Ok(())
    }

    fn update_step(&mut self, _z: &MeasurementSet) -> Result<Vec<TrackEstimate>> {
        Ok(Vec::new())
    }

    fn estimates(&self) -> Vec<TrackEstimate> {
        Vec::new()
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
