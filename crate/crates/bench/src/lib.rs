//! Fixtures shared by the criterion benches: pre-generated scenarios and a
//! replay loop, so benches time filter work and nothing else.

use mtt_core::harness::tracker_config_for;
use mtt_core::motion::StateCovariance;
use mtt_core::nalgebra::Vector3;
use mtt_core::scaling::scaling_template;
use mtt_core::sim::frames;
use mtt_core::tracker::default_initial_covariance;
use mtt_core::{generate, initialize, FilterKind, Result, ScenarioConfig, SimEvent, TrackState, Tracker};

pub struct Fixture {
    pub config: ScenarioConfig,
    pub events: Vec<SimEvent>,
    priors: Vec<(TrackState, StateCovariance)>,
}

impl Fixture {
    /// Zero-noise crossing with `n_targets` drones, `duration` seconds long.
    pub fn crossing(n_targets: usize, duration: f64, seed: u64) -> Result<Self> {
        let mut config = scaling_template(duration);
        config.n_targets = n_targets;
        config.seed = seed;
        let config = config.resolved()?;
        let events = generate(&config)?;
        let priors = frames(&events)
            .next()
            .map(|f| f.truth.iter().filter_map(|t| t.pixel).map(|p| (TrackState::at_rest(p), default_initial_covariance())).collect())
            .unwrap_or_default();
        Ok(Self { config, events, priors })
    }

    /// Fresh ungated tracker seeded on the first frame's truth.
    pub fn tracker(&self, kind: FilterKind) -> Result<Box<dyn Tracker>> {
        let mut tc = tracker_config_for(&self.config, kind)?;
        tc.gate_threshold = None;
        initialize(kind, tc, &self.priors)
    }

    /// Feeds every event to `tracker`; returns the number of estimates seen.
    pub fn replay(&self, tracker: &mut dyn Tracker) -> Result<usize> {
        let mut reported = 0;
        let mut last_time = 0.0;
        let mut omega = Vector3::zeros();
        for event in &self.events {
            match event {
                SimEvent::Imu(s) => {
                    if s.time > last_time {
                        tracker.predict_step(&omega, s.time - last_time)?;
                        last_time = s.time;
                    }
                    omega = s.angular_velocity;
                }
                SimEvent::Frame(f) => reported += tracker.update_step(&f.measurements)?.len(),
            }
        }
        Ok(reported)
    }
}
