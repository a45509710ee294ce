//! Named experiment presets: the noise-robustness grid, seeded accuracy
//! sweeps and the multi-observer consensus study.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{assign_ids, BroadcastEntry, InitBroadcast};
use crate::error::{MttError, Result};
use crate::geometry::{in_view, project, PixelPoint};
use crate::harness::{run_rows, run_tracking, RunRow};
use crate::metrics::RunMetrics;
use crate::motion::TrackState;
use crate::sim::{builtin_crossing_scenario, frames, generate, NoiseConfig, ObserverConfig, Provenance, ScenarioConfig, Trajectory, Waypoint};
use crate::tracker::{FilterKind, TrackEstimate};

const CONSENSUS_STREAM: u64 = 4;

/// Detector corruption family varied by a noise study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseAxis {
    /// Expected false positives per frame.
    Clutter,
    /// Additive Gaussian noise as a fraction of the nominal covariance.
    Gaussian,
    /// Detection probability.
    Detection,
}

impl NoiseAxis {
    pub const ALL: [NoiseAxis; 3] = [NoiseAxis::Clutter, NoiseAxis::Gaussian, NoiseAxis::Detection];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseAxis::Clutter => "clutter",
            NoiseAxis::Gaussian => "gaussian",
            NoiseAxis::Detection => "detection",
        }
    }

    /// Noise with only this axis active at `level`.
    pub fn isolated(&self, level: f64) -> NoiseConfig {
        let mut n = NoiseConfig::default();
        match self {
            NoiseAxis::Clutter => n.clutter_count = level,
            NoiseAxis::Gaussian => n.meas_noise_frac = level,
            NoiseAxis::Detection => n.detect_prob = level,
        }
        n
    }

    /// Levels used by the preset grid.
    pub fn preset_levels(&self) -> &'static [f64] {
        match self {
            NoiseAxis::Clutter => &[1.0, 10.0],
            NoiseAxis::Gaussian => &[0.25, 0.75],
            NoiseAxis::Detection => &[0.97, 0.80],
        }
    }
}

impl fmt::Display for NoiseAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseAxis {
    type Err = MttError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clutter" | "false-positive" | "fp" => Ok(NoiseAxis::Clutter),
            "gaussian" | "noise" | "additive" => Ok(NoiseAxis::Gaussian),
            "detection" | "detect" | "detect_prob" | "false-negative" | "fn" => Ok(NoiseAxis::Detection),
            other => Err(MttError::InvalidConfig(format!("unknown noise axis '{other}'"))),
        }
    }
}

/// Where a run's scenario comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioSource {
    /// The builtin crossing layout, regenerated per seed.
    Crossing { n_targets: usize, speed_scale: f64 },
    /// A fixed scenario; only its seed changes between runs.
    Config(Box<ScenarioConfig>),
}

impl ScenarioSource {
    /// Parses builtin names of the form `crossingN`.
    pub fn builtin(name: &str) -> Option<Self> {
        let n: usize = name.strip_prefix("crossing")?.parse().ok()?;
        Some(ScenarioSource::Crossing { n_targets: n, speed_scale: 1.0 })
    }

    /// Resolved scenario for `seed`, keeping the source's own noise and
    /// tracking settings.
    pub fn instantiate(&self, seed: u64) -> Result<ScenarioConfig> {
        match self {
            ScenarioSource::Crossing { n_targets, speed_scale } => builtin_crossing_scenario(*n_targets, *speed_scale, seed),
            ScenarioSource::Config(cfg) => ScenarioConfig { seed, ..(**cfg).clone() }.resolved(),
        }
    }

    pub fn n_targets(&self) -> usize {
        match self {
            ScenarioSource::Crossing { n_targets, .. } => *n_targets,
            ScenarioSource::Config(cfg) => cfg.n_targets,
        }
    }
}

/// One noise setting of a study; `None` keeps the scenario's own noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub axis: NoiseAxis,
    pub level: f64,
}

/// A fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRun {
    pub filter: FilterKind,
    pub cell: Option<NoiseCell>,
    pub seed: u64,
    pub config: ScenarioConfig,
}

/// Filters × noise cells × seeds over one scenario source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub scenario: ScenarioSource,
    pub filters: Vec<FilterKind>,
    /// Empty means a single cell with the scenario's own noise.
    pub cells: Vec<NoiseCell>,
    pub seeds: Vec<u64>,
}

impl StudyPlan {
    /// Noise grid on the 3-drone crossing: each axis at its two preset levels
    /// with every other noise source off, all filters, seeds 0..10.
    pub fn preset_noise_study() -> Self {
        Self {
            scenario: ScenarioSource::Crossing { n_targets: 3, speed_scale: 1.0 },
            filters: FilterKind::ALL.to_vec(),
            cells: NoiseAxis::ALL
                .iter()
                .flat_map(|&axis| axis.preset_levels().iter().map(move |&level| NoiseCell { axis, level }))
                .collect(),
            seeds: (0..10).collect(),
        }
    }

    /// Expands into runs, ordered by cell, then filter, then seed.
    pub fn runs(&self) -> Result<Vec<StudyRun>> {
        let cells: Vec<Option<NoiseCell>> =
            if self.cells.is_empty() { vec![None] } else { self.cells.iter().copied().map(Some).collect() };
        let mut base = BTreeMap::new();
        for &seed in &self.seeds {
            base.insert(seed, self.scenario.instantiate(seed)?);
        }
        let mut runs = Vec::with_capacity(cells.len() * self.filters.len() * self.seeds.len());
        for cell in &cells {
            for &filter in &self.filters {
                for &seed in &self.seeds {
                    let mut config = base[&seed].clone();
                    if let Some(c) = cell {
                        config.noise = c.axis.isolated(c.level);
                    }
                    config.validate()?;
                    runs.push(StudyRun { filter, cell: *cell, seed, config });
                }
            }
        }
        Ok(runs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub filter: FilterKind,
    pub cell: Option<NoiseCell>,
    pub seed: u64,
    pub n_targets: usize,
    pub metrics: RunMetrics,
    pub rows: Vec<RunRow>,
}

/// Executes runs, optionally across worker threads. Results keep the input
/// order either way, so downstream files do not depend on scheduling.
pub fn execute(runs: &[StudyRun], parallel: bool) -> Result<Vec<RunResult>> {
    let one = |r: &StudyRun| -> Result<RunResult> {
        let out = run_tracking(&r.config, r.filter)?;
        Ok(RunResult {
            filter: r.filter,
            cell: r.cell,
            seed: r.seed,
            n_targets: r.config.n_targets,
            rows: run_rows(&out),
            metrics: out.metrics,
        })
    };
    if parallel {
        runs.par_iter().map(one).collect()
    } else {
        runs.iter().map(one).collect()
    }
}

/// One line of the summary table. The first seven columns are fixed; the
/// spread and seed count follow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub filter: &'static str,
    pub n_targets: usize,
    pub noise_axis: &'static str,
    pub noise_level: Option<f64>,
    /// Mean over seeds of the per-run mean RMSE, pixels.
    pub rmse: f64,
    /// Mean ID switches per run.
    pub switches: f64,
    /// Left empty unless timing was requested, keeping the file reproducible.
    pub mean_iter_time_s: Option<f64>,
    /// Sample standard deviation of the per-run RMSE.
    pub rmse_std: f64,
    pub seeds: usize,
}

/// Groups results by (filter, cell) in first-appearance order. Runs in which
/// no target was ever estimated have an undefined RMSE and are left out of
/// the RMSE statistics.
pub fn summarize(results: &[RunResult], record_timing: bool) -> Vec<SummaryRow> {
    let mut order: Vec<(FilterKind, Option<NoiseCell>, usize)> = Vec::new();
    let mut groups: Vec<Vec<&RunResult>> = Vec::new();
    for r in results {
        let key = (r.filter, r.cell, r.n_targets);
        match order.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r),
            None => {
                order.push(key);
                groups.push(vec![r]);
            }
        }
    }
    order
        .into_iter()
        .zip(groups)
        .map(|((filter, cell, n_targets), runs)| {
            let rmse: Vec<f64> = runs.iter().map(|r| r.metrics.mean_rmse).filter(|x| x.is_finite()).collect();
            let (mean, std) = mean_std(&rmse);
            let times: Vec<f64> = runs.iter().flat_map(|r| r.metrics.per_iteration_time.iter().copied()).collect();
            SummaryRow {
                filter: filter.name(),
                n_targets,
                noise_axis: cell.map_or("none", |c| c.axis.name()),
                noise_level: cell.map(|c| c.level),
                rmse: mean,
                switches: runs.iter().map(|r| r.metrics.id_switch_count as f64).sum::<f64>() / runs.len() as f64,
                mean_iter_time_s: (record_timing && !times.is_empty())
                    .then(|| times.iter().sum::<f64>() / times.len() as f64),
                rmse_std: std,
                seeds: runs.len(),
            }
        })
        .collect()
}

/// Mean and sample standard deviation; NaN where undefined.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { f64::NAN };
    (mean, std)
}

/// Multiple observers view the same drones from different poses and run
/// consensus on their first detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusStudy {
    pub n_observers: usize,
    pub n_targets: usize,
    pub trials: usize,
    /// Scenes are drawn so that, for every observer, distinct true
    /// projections are more than `2 r` apart.
    pub separation_r_px: f64,
    pub meas_noise_frac: f64,
    pub seed: u64,
}

impl Default for ConsensusStudy {
    fn default() -> Self {
        Self { n_observers: 3, n_targets: 3, trials: 100, separation_r_px: 10.0, meas_noise_frac: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsensusRow {
    pub trial: usize,
    pub observer: usize,
    pub local_track: usize,
    pub assigned_id: Option<u32>,
    pub true_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusReport {
    pub trials: usize,
    /// Trials in which every observer mapped every track to its true drone.
    pub agreeing: usize,
    pub rows: Vec<ConsensusRow>,
}

impl ConsensusReport {
    pub fn agreement(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.agreeing as f64 / self.trials as f64
        }
    }
}

impl ConsensusStudy {
    /// Observer placements: the first at the origin looking down +z, the rest
    /// spread on a 2 m arc, all aimed at the scene centre 6 m ahead.
    pub fn observers(&self) -> Vec<ObserverConfig> {
        let centre = Vector3::new(0.0, 0.0, 6.0);
        (0..self.n_observers)
            .map(|i| {
                let position = if i == 0 {
                    Vector3::zeros()
                } else {
                    let a = std::f64::consts::TAU * (i - 1) as f64 / (self.n_observers - 1) as f64;
                    Vector3::new(2.0 * a.cos(), 0.5 * a.sin(), 0.0)
                };
                // Camera y points down; with world y down as well the
                // reference observer has the identity orientation.
                let to_camera = Rotation3::face_towards(&(centre - position), &Vector3::y()).inverse();
                ObserverConfig { position: position.into(), orientation: to_camera.scaled_axis().into(), angular_velocity: [0.0; 3] }
            })
            .collect()
    }

    pub fn run(&self) -> Result<ConsensusReport> {
        if self.n_observers == 0 || self.n_targets == 0 {
            return Err(MttError::InvalidConfig("consensus study needs observers and targets".into()));
        }
        let observers = self.observers();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(CONSENSUS_STREAM);
        let mut report = ConsensusReport { trials: self.trials, agreeing: 0, rows: Vec::new() };
        for trial in 0..self.trials {
            let scene = self.draw_scene(&observers, &mut rng)?;
            let broadcast =
                InitBroadcast::new(scene.iter().enumerate().map(|(i, p)| BroadcastEntry::new(i as u32, p.coords)).collect())?;
            let mut all_correct = true;
            for (o, observer) in observers.iter().enumerate() {
                let cfg = ScenarioConfig {
                    n_targets: self.n_targets,
                    duration: 0.01,
                    seed: self.seed ^ ((trial as u64) << 16) ^ o as u64,
                    observer: *observer,
                    noise: NoiseConfig { meas_noise_frac: self.meas_noise_frac, ..NoiseConfig::default() },
                    trajectories: Some(
                        scene.iter().map(|p| Trajectory { waypoints: vec![Waypoint { t: 0.0, position: p.coords.into() }] }).collect(),
                    ),
                    ..builtin_crossing_scenario(2, 1.0, 0)?
                };
                let events = generate(&cfg)?;
                let first = frames(&events).next().expect("frame 0 exists");
                // Local indices carry no identity.
                let mut detections: Vec<(PixelPoint, u32)> = first
                    .measurements
                    .detections
                    .iter()
                    .zip(&first.provenance)
                    .filter_map(|(m, p)| match p {
                        Provenance::Target(i) => Some((m.point, *i as u32)),
                        Provenance::Clutter => None,
                    })
                    .collect();
                detections.shuffle(&mut rng);
                let tracks: Vec<TrackEstimate> = detections
                    .iter()
                    .enumerate()
                    .map(|(local, (p, _))| TrackEstimate { local_track_index: local, state: TrackState::at_rest(*p), covariance: None })
                    .collect();
                let assignment = assign_ids(&tracks, &broadcast, &cfg.observer_pose(0.0), &cfg.intrinsics);
                for (local, (_, true_id)) in detections.iter().enumerate() {
                    let assigned_id = assignment.id_of(local);
                    all_correct &= assigned_id == Some(*true_id);
                    report.rows.push(ConsensusRow { trial, observer: o, local_track: local, assigned_id, true_id: *true_id });
                }
                all_correct &= detections.len() == self.n_targets;
            }
            report.agreeing += usize::from(all_correct);
        }
        Ok(report)
    }

    /// Rejection-samples drone positions in a box around the scene centre
    /// until every observer sees them all, pairwise more than `2 r` apart.
    fn draw_scene(&self, observers: &[ObserverConfig], rng: &mut ChaCha8Rng) -> Result<Vec<Point3<f64>>> {
        let k = crate::geometry::CameraIntrinsics::default();
        for _ in 0..100_000 {
            let scene: Vec<Point3<f64>> = (0..self.n_targets)
                .map(|_| Point3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(4.5..7.5)))
                .collect();
            let ok = observers.iter().all(|o| {
                let pose = o.pose(0.0);
                let px: Option<Vec<PixelPoint>> = scene
                    .iter()
                    .map(|p| project(p, &pose, &k).ok().filter(|q| in_view(q, &k)))
                    .collect();
                px.is_some_and(|px| {
                    (0..px.len()).all(|i| (0..i).all(|j| px[i].distance(&px[j]) > 2.0 * self.separation_r_px))
                })
            });
            if ok {
                return Ok(scene);
            }
        }
        Err(MttError::Scenario("could not draw a separated scene".into()))
    }
}
