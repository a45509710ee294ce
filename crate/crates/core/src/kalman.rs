//! Kalman filter with greedy maximum-likelihood association.
//!
//! Each track takes the measurement with the highest innovation likelihood
//! `N(z − Hμ; 0, HPHᵀ + R)`; conflicts are resolved first-come in descending
//! likelihood order. Unassigned tracks coast on their prediction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector3};

use crate::error::{MttError, Result};
use crate::linalg::{symmetrize, Gaussian2};
use crate::motion::{measurement_matrix, predict, StateGaussian, TrackState};
use crate::tracker::{Clock, FilterKind, Measurement, MeasurementSet, TrackEstimate, Tracker, TrackerConfig};

/// Innovation statistics of one predicted track against the measurement model.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Innovation {
    pub predicted: Vector2<f64>,
    pub density: Gaussian2,
    pub gain: Matrix4x2<f64>,
}

impl Innovation {
    pub fn new(track: &StateGaussian, r: &Matrix2<f64>) -> Result<Self> {
        let h: Matrix2x4<f64> = measurement_matrix();
        let s = h * track.covariance * h.transpose() + r;
        let density = Gaussian2::new(&s)?;
        let gain = track.covariance * h.transpose() * density.inverse();
        Ok(Self {
            predicted: h * track.mean,
            density,
            gain,
        })
    }

    pub fn residual(&self, z: &Measurement) -> Vector2<f64> {
        Vector2::new(z.point.u, z.point.v) - self.predicted
    }

    /// `(I − KH)P`, symmetrised.
    pub fn corrected_covariance(&self, track: &StateGaussian) -> Matrix4<f64> {
        let ikh = Matrix4::identity() - self.gain * measurement_matrix();
        symmetrize(&(ikh * track.covariance))
    }
}

pub fn kf_update(track: &StateGaussian, z: &Measurement, config: &TrackerConfig) -> Result<StateGaussian> {
    let inn = Innovation::new(track, &config.measurement_noise)?;
    Ok(StateGaussian {
        mean: track.mean + inn.gain * inn.residual(z),
        covariance: inn.corrected_covariance(track),
    })
}

/// Greedy maximum-likelihood association. Entry `i` is the measurement index
/// assigned to track `i`, if any.
pub fn associate_ml(
    tracks: &[StateGaussian],
    z: &MeasurementSet,
    config: &TrackerConfig,
) -> Result<Vec<Option<usize>>> {
    let mut pairs = Vec::with_capacity(tracks.len() * z.len());
    for (i, track) in tracks.iter().enumerate() {
        let inn = Innovation::new(track, &config.measurement_noise)?;
        let log_peak = inn.density.pdf(&Vector2::zeros()).ln();
        for (j, m) in z.detections.iter().enumerate() {
            let d2 = inn.density.mahalanobis_sq(&inn.residual(m));
            if config.gate_threshold.is_some_and(|gate| d2 > gate) {
                continue;
            }
            pairs.push(Candidate { log_likelihood: log_peak - 0.5 * d2, track: i, measurement: j });
        }
    }
    // Heapify is linear; only the pops actually needed pay a logarithm.
    let mut heap = BinaryHeap::from(pairs);

    let mut assignment = vec![None; tracks.len()];
    let mut taken = vec![false; z.len()];
    let mut remaining = tracks.len().min(z.len());
    while remaining > 0 {
        let Some(c) = heap.pop() else { break };
        if assignment[c.track].is_none() && !taken[c.measurement] {
            assignment[c.track] = Some(c.measurement);
            taken[c.measurement] = true;
            remaining -= 1;
        }
    }
    Ok(assignment)
}

/// Heap order: highest likelihood first, ties to the lower track then
/// measurement index.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    log_likelihood: f64,
    track: usize,
    measurement: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.log_likelihood
            .total_cmp(&other.log_likelihood)
            .then(other.track.cmp(&self.track))
            .then(other.measurement.cmp(&self.measurement))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

pub(crate) fn estimates_of(tracks: &[StateGaussian]) -> Vec<TrackEstimate> {
    tracks
        .iter()
        .enumerate()
        .map(|(i, g)| TrackEstimate {
            local_track_index: i,
            state: g.state(),
            covariance: Some(g.covariance),
        })
        .collect()
}

pub(crate) fn priors(initial: &[(TrackState, Matrix4<f64>)]) -> Result<Vec<StateGaussian>> {
    if initial.is_empty() {
        return Err(MttError::NoInitialTracks);
    }
    initial
        .iter()
        .map(|(s, p)| StateGaussian::new(s.to_vector(), *p))
        .collect()
}

/// Fixed-size fleet tracked with independent Kalman filters.
#[derive(Debug, Clone)]
pub struct KalmanTracker {
    config: TrackerConfig,
    tracks: Vec<StateGaussian>,
    clock: Clock,
}

impl KalmanTracker {
    pub fn new(config: TrackerConfig, initial: &[(TrackState, Matrix4<f64>)]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: priors(initial)?,
            clock: Clock::default(),
        })
    }

    pub fn tracks(&self) -> &[StateGaussian] {
        &self.tracks
    }
}

impl Tracker for KalmanTracker {
    fn kind(&self) -> FilterKind {
        FilterKind::Kalman
    }

    fn predict_step(&mut self, omega: &Vector3<f64>, dt: f64) -> Result<()> {
        self.clock.on_predict(dt)?;
        let params = self.config.model.with_dt(dt);
        for t in &mut self.tracks {
            *t = predict(t, omega, &params);
        }
        Ok(())
    }

    fn update_step(&mut self, z: &MeasurementSet) -> Result<Vec<TrackEstimate>> {
        self.clock.on_update(z)?;
        let assignment = associate_ml(&self.tracks, z, &self.config)?;
        for (track, j) in self.tracks.iter_mut().zip(assignment) {
            if let Some(j) = j {
                *track = kf_update(track, &z.detections[j], &self.config)?;
            }
        }
        Ok(self.estimates())
    }

    fn estimates(&self) -> Vec<TrackEstimate> {
        estimates_of(&self.tracks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::motion::{ModelParams, StateVector};
    use nalgebra::Vector4;
    use proptest::prelude::*;

    fn config(r: f64) -> TrackerConfig {
        let model = ModelParams::new(0.1, 1.0, CameraIntrinsics::default()).unwrap();
        TrackerConfig::new(model, Matrix2::identity() * r)
    }

    fn track(u: f64, v: f64, var: f64) -> StateGaussian {
        StateGaussian::new(
            StateVector::new(u, 0.0, v, 0.0),
            Matrix4::from_diagonal(&Vector4::new(var, 1.0, var, 1.0)),
        )
        .unwrap()
    }

    fn set(points: &[(f64, f64)]) -> MeasurementSet {
        MeasurementSet::new(1.0, points.iter().map(|&(u, v)| Measurement::new(u, v)).collect())
    }

    #[test]
    fn single_pair_assigned() {
        let a = associate_ml(&[track(100.0, 100.0, 4.0)], &set(&[(100.0, 100.0)]), &config(1.0)).unwrap();
        assert_eq!(a, vec![Some(0)]);
    }

    #[test]
    fn separated_tracks_identity() {
        let tracks = [track(100.0, 100.0, 4.0), track(400.0, 300.0, 4.0)];
        let a = associate_ml(&tracks, &set(&[(400.5, 299.5), (100.3, 100.9)]), &config(1.0)).unwrap();
        assert_eq!(a, vec![Some(1), Some(0)]);
    }

    #[test]
    fn contested_measurement_goes_to_closer_track() {
        // Tracks 5 px apart, one measurement 2 px from the first.
        let tracks = [track(100.0, 100.0, 1.0), track(105.0, 100.0, 1.0)];
        let cfg = config(100.0);
        let z = set(&[(102.0, 100.0)]);
        // Oracle: evaluate both Gaussian likelihoods directly.
        let s = 1.0 + 100.0;
        let lik = |d: f64| (-(d * d) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s);
        assert!(lik(2.0) > lik(3.0));
        let a = associate_ml(&tracks, &z, &cfg).unwrap();
        assert_eq!(a, vec![Some(0), None]);
    }

    #[test]
    fn gate_rejects_distant_measurement() {
        let mut cfg = config(1.0);
        cfg.gate_threshold = Some(9.21);
        let a = associate_ml(&[track(100.0, 100.0, 1.0)], &set(&[(200.0, 100.0)]), &cfg).unwrap();
        assert_eq!(a, vec![None]);
        cfg.gate_threshold = None;
        let a = associate_ml(&[track(100.0, 100.0, 1.0)], &set(&[(200.0, 100.0)]), &cfg).unwrap();
        assert_eq!(a, vec![Some(0)]);
    }

    #[test]
    fn update_zero_innovation() {
        let t = track(50.0, 60.0, 9.0);
        let out = kf_update(&t, &Measurement::new(50.0, 60.0), &config(4.0)).unwrap();
        assert_eq!(out.mean, t.mean);
    }

    #[test]
    fn update_uninformative_measurement() {
        let t = track(50.0, 60.0, 9.0);
        let out = kf_update(&t, &Measurement::new(500.0, -60.0), &config(1e12)).unwrap();
        assert!((out.mean - t.mean).abs().max() < 1e-6);
    }

    #[test]
    fn update_midpoint_with_equal_variances() {
        let t = StateGaussian::new(StateVector::new(10.0, 0.0, 20.0, 0.0), Matrix4::identity()).unwrap();
        let out = kf_update(&t, &Measurement::new(14.0, 10.0), &config(1.0)).unwrap();
        // Scalar gain P/(P+R) = 0.5 on each position row.
        assert!((out.mean[0] - 12.0).abs() < 1e-12);
        assert!((out.mean[2] - 15.0).abs() < 1e-12);
        assert!((out.covariance[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_innovation_surfaces() {
        let t = StateGaussian { mean: StateVector::zeros(), covariance: Matrix4::zeros() };
        let mut cfg = config(1.0);
        cfg.measurement_noise = Matrix2::zeros();
        assert_eq!(kf_update(&t, &Measurement::new(1.0, 1.0), &cfg), Err(MttError::SingularInnovation));
    }

    #[test]
    fn noiseless_measurements_identity_assignment() {
        let tracks: Vec<_> = (0..6).map(|i| track(50.0 + 80.0 * i as f64, 100.0 + 30.0 * i as f64, 4.0)).collect();
        let mut pts: Vec<_> = tracks.iter().map(|t| (t.mean[0], t.mean[2])).collect();
        pts.reverse();
        let a = associate_ml(&tracks, &set(&pts), &config(1.0)).unwrap();
        let expect: Vec<_> = (0..6).map(|i| Some(5 - i)).collect();
        assert_eq!(a, expect);
    }

    proptest! {
        #[test]
        fn association_ignores_measurement_order(
            pts in proptest::collection::vec((0.0..640.0f64, 0.0..480.0f64), 1..8),
            rot in 0usize..8,
        ) {
            let tracks = [track(100.0, 100.0, 4.0), track(300.0, 200.0, 9.0), track(500.0, 400.0, 2.0)];
            let cfg = config(2.0);
            let base = associate_ml(&tracks, &set(&pts), &cfg).unwrap();
            let k = rot % pts.len();
            let mut rotated = pts.clone();
            rotated.rotate_left(k);
            let other = associate_ml(&tracks, &set(&rotated), &cfg).unwrap();
            let n = pts.len();
            let mapped: Vec<_> = other.iter().map(|j| j.map(|j| (j + k) % n)).collect();
            prop_assert_eq!(base, mapped);
        }

        #[test]
        fn posterior_trace_never_grows(
            u in 0.0..640.0f64, v in 0.0..480.0f64, var in 0.1..100.0f64, r in 0.1..100.0f64,
            zu in 0.0..640.0f64, zv in 0.0..480.0f64,
        ) {
            let t = track(u, v, var);
            let out = kf_update(&t, &Measurement::new(zu, zv), &config(r)).unwrap();
            prop_assert!(out.covariance.trace() <= t.covariance.trace() + 1e-12);
        }
    }
}
