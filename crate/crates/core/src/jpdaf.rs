//! Joint probabilistic data association.
//!
//! Every feasible joint event (each track claims at most one gated
//! measurement, no measurement claimed twice) is enumerated exactly. Event
//! weights are `Π p_d·L(i,j) · Π (1 − p_d) · λ^(unclaimed)`, with `λ` the
//! uniform clutter density.

use std::time::Instant;

use nalgebra::{DMatrix, Matrix4, Vector2, Vector3};

use crate::error::{MttError, Result};
use crate::kalman::{estimates_of, priors, Innovation};
use crate::linalg::symmetrize;
use crate::motion::{predict, StateGaussian, TrackState};
use crate::tracker::{Clock, FilterKind, MeasurementSet, TrackEstimate, Tracker, TrackerConfig};

/// One joint association hypothesis: `mapping[i]` is the measurement claimed
/// by track `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssociationEvent {
    pub mapping: Vec<Option<usize>>,
}

impl AssociationEvent {
    /// Binary hypothesis matrix, `n_tracks × (n_meas + 1)`; column 0 marks
    /// "no measurement".
    pub fn indicator(&self, n_meas: usize) -> DMatrix<u8> {
        let mut m = DMatrix::zeros(self.mapping.len(), n_meas + 1);
        for (i, j) in self.mapping.iter().enumerate() {
            m[(i, j.map_or(0, |j| j + 1))] = 1;
        }
        m
    }

    pub fn assigned(&self) -> usize {
        self.mapping.iter().filter(|j| j.is_some()).count()
    }

    pub fn is_feasible(&self, gates: &[Vec<bool>]) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.mapping.iter().enumerate().all(|(i, j)| match j {
            None => true,
            Some(j) => gates[i][*j] && seen.insert(*j),
        })
    }
}

/// Row-stochastic association probabilities, `n_tracks × (n_meas + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMatrix {
    pub beta: DMatrix<f64>,
}

impl BetaMatrix {
    pub fn no_measurement(&self, track: usize) -> f64 {
        self.beta[(track, 0)]
    }

    pub fn measurement(&self, track: usize, meas: usize) -> f64 {
        self.beta[(track, meas + 1)]
    }
}

/// Gate matrix and pairwise innovation likelihoods for a frame.
#[derive(Debug, Clone)]
pub struct PairTable {
    pub gates: Vec<Vec<bool>>,
    pub likelihoods: DMatrix<f64>,
    pub residuals: Vec<Vec<Vector2<f64>>>,
}

pub(crate) fn pair_table(tracks: &[StateGaussian], z: &MeasurementSet, config: &TrackerConfig) -> Result<(PairTable, Vec<Innovation>)> {
    let n = tracks.len();
    let m = z.len();
    let mut gates = vec![vec![false; m]; n];
    let mut likelihoods = DMatrix::zeros(n, m);
    let mut residuals = vec![Vec::with_capacity(m); n];
    let mut innovations = Vec::with_capacity(n);
    for (i, t) in tracks.iter().enumerate() {
        let inn = Innovation::new(t, &config.measurement_noise)?;
        for (j, meas) in z.detections.iter().enumerate() {
            let y = inn.residual(meas);
            let inside = config
                .gate_threshold
                .is_none_or(|g| inn.density.mahalanobis_sq(&y) <= g);
            gates[i][j] = inside;
            if inside {
                likelihoods[(i, j)] = inn.density.pdf(&y);
            }
            residuals[i].push(y);
        }
        innovations.push(inn);
    }
    Ok((PairTable { gates, likelihoods, residuals }, innovations))
}

/// All injective partial track→measurement maps consistent with `gates`,
/// including the empty event.
pub fn enumerate_events(n_tracks: usize, n_meas: usize, gates: &[Vec<bool>]) -> Vec<AssociationEvent> {
    fn rec(
        i: usize,
        n_meas: usize,
        gates: &[Vec<bool>],
        taken: &mut [bool],
        current: &mut Vec<Option<usize>>,
        out: &mut Vec<AssociationEvent>,
    ) {
        if i == current.len() {
            out.push(AssociationEvent { mapping: current.clone() });
            return;
        }
        current[i] = None;
        rec(i + 1, n_meas, gates, taken, current, out);
        for j in 0..n_meas {
            if gates[i][j] && !taken[j] {
                taken[j] = true;
                current[i] = Some(j);
                rec(i + 1, n_meas, gates, taken, current, out);
                taken[j] = false;
            }
        }
        current[i] = None;
    }
    let mut out = Vec::new();
    rec(0, n_meas, gates, &mut vec![false; n_meas], &mut vec![None; n_tracks], &mut out);
    out
}

/// Unnormalised weight of a joint event.
pub fn event_probability(
    ev: &AssociationEvent,
    likelihoods: &DMatrix<f64>,
    config: &TrackerConfig,
    n_meas: usize,
) -> f64 {
    let pd = config.detection_prob;
    let assigned_factor: f64 = ev
        .mapping
        .iter()
        .enumerate()
        .map(|(i, j)| match j {
            Some(j) => pd * likelihoods[(i, *j)],
            None => 1.0 - pd,
        })
        .product();
    let unclaimed = n_meas - ev.assigned();
    assigned_factor * config.clutter_density().powi(unclaimed as i32)
}

struct BetaSearch<'a> {
    gates: &'a [Vec<bool>],
    likelihoods: &'a DMatrix<f64>,
    pd: f64,
    /// `λ^k` for `k` unclaimed measurements; empty when the scaled form is used.
    clutter_pow: Vec<f64>,
    likelihood_scale: f64,
    deadline: Option<Instant>,
    taken: Vec<bool>,
    path: Vec<Option<usize>>,
    beta: DMatrix<f64>,
    total: f64,
    leaves: u64,
}

impl BetaSearch<'_> {
    fn visit(&mut self, i: usize, weight: f64, assigned: usize) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        if i == self.path.len() {
            self.leaves += 1;
            if self.leaves & 0x3fff == 0 {
                if let Some(d) = self.deadline {
                    if Instant::now() >= d {
                        return Err(MttError::Timeout);
                    }
                }
            }
            let w = weight * self.clutter_pow.get(self.taken.len() - assigned).copied().unwrap_or(1.0);
            self.total += w;
            for (t, j) in self.path.iter().enumerate() {
                self.beta[(t, j.map_or(0, |j| j + 1))] += w;
            }
            return Ok(());
        }
        self.path[i] = None;
        self.visit(i + 1, weight * (1.0 - self.pd), assigned)?;
        for j in 0..self.taken.len() {
            if self.gates[i][j] && !self.taken[j] {
                self.taken[j] = true;
                self.path[i] = Some(j);
                let lik = self.pd * self.likelihoods[(i, j)] * self.likelihood_scale;
                let r = self.visit(i + 1, weight * lik, assigned + 1);
                self.taken[j] = false;
                r?;
            }
        }
        self.path[i] = None;
        Ok(())
    }
}

/// Marginal association probabilities by exhaustive event enumeration. A
/// frame whose events all carry zero weight falls back to the empty event.
pub fn beta_matrix(
    gates: &[Vec<bool>],
    likelihoods: &DMatrix<f64>,
    config: &TrackerConfig,
    deadline: Option<Instant>,
) -> Result<BetaMatrix> {
    let n = likelihoods.nrows();
    let m = likelihoods.ncols();
    // Dividing every event weight by λ^m leaves the normalised marginals
    // unchanged and avoids underflow with many measurements.
    let density = config.clutter_density();
    let (clutter_pow, likelihood_scale) = if density > 0.0 {
        (Vec::new(), 1.0 / density)
    } else {
        let mut pow = vec![1.0];
        pow.resize(m + 1, 0.0);
        (pow, 1.0)
    };
    let mut search = BetaSearch {
        gates,
        likelihoods,
        pd: config.detection_prob,
        clutter_pow,
        likelihood_scale,
        deadline,
        taken: vec![false; m],
        path: vec![None; n],
        beta: DMatrix::zeros(n, m + 1),
        total: 0.0,
        leaves: 0,
    };
    search.visit(0, 1.0, 0)?;

    let mut beta = search.beta;
    if search.total > 0.0 && search.total.is_finite() {
        beta /= search.total;
    } else {
        beta.fill(0.0);
        beta.column_mut(0).fill(1.0);
    }
    Ok(BetaMatrix { beta })
}

/// Combined-innovation update of every track, with the spread-of-innovations
/// covariance term.
pub fn jpdaf_update_with_deadline(
    tracks: &[StateGaussian],
    z: &MeasurementSet,
    config: &TrackerConfig,
    deadline: Option<Instant>,
) -> Result<Vec<StateGaussian>> {
    let (table, innovations) = pair_table(tracks, z, config)?;
    let beta = beta_matrix(&table.gates, &table.likelihoods, config, deadline)?;
    Ok(tracks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let inn = &innovations[i];
            let b0 = beta.no_measurement(i);
            if b0 >= 1.0 {
                return *t;
            }
            let mut y = Vector2::zeros();
            let mut spread = nalgebra::Matrix2::zeros();
            for (j, yj) in table.residuals[i].iter().enumerate() {
                let b = beta.measurement(i, j);
                if b > 0.0 {
                    y += yj * b;
                    spread += yj * yj.transpose() * b;
                }
            }
            let k = inn.gain;
            let corrected = inn.corrected_covariance(t);
            let cov = t.covariance * b0
                + corrected * (1.0 - b0)
                + k * (spread - y * y.transpose()) * k.transpose();
            StateGaussian {
                mean: t.mean + k * y,
                covariance: symmetrize(&cov),
            }
        })
        .collect())
}

pub fn jpdaf_update(tracks: &[StateGaussian], z: &MeasurementSet, config: &TrackerConfig) -> Result<Vec<StateGaussian>> {
    jpdaf_update_with_deadline(tracks, z, config, None)
}

/// Fixed-size fleet tracked with the JPDAF.
#[derive(Debug, Clone)]
pub struct JpdafTracker {
    config: TrackerConfig,
    tracks: Vec<StateGaussian>,
    clock: Clock,
    deadline: Option<Instant>,
}

impl JpdafTracker {
    pub fn new(config: TrackerConfig, initial: &[(TrackState, Matrix4<f64>)]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: priors(initial)?,
            clock: Clock::default(),
            deadline: None,
        })
    }

    pub fn tracks(&self) -> &[StateGaussian] {
        &self.tracks
    }
}

impl Tracker for JpdafTracker {
    fn kind(&self) -> FilterKind {
        FilterKind::Jpdaf
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
        self.tracks = jpdaf_update_with_deadline(&self.tracks, z, &self.config, self.deadline)?;
        Ok(self.estimates())
    }

    fn estimates(&self) -> Vec<TrackEstimate> {
        estimates_of(&self.tracks)
    }

    fn set_deadline(&mut self, deadline: Option<Instant>) {
        self.deadline = deadline;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::kalman::kf_update;
    use crate::motion::{ModelParams, StateVector};
    use crate::tracker::Measurement;
    use nalgebra::{Matrix2, Vector4};
    use std::time::Duration;

    fn config(pd: f64, clutter: f64) -> TrackerConfig {
        let model = ModelParams::new(0.1, 1.0, CameraIntrinsics::default()).unwrap();
        let mut c = TrackerConfig::new(model, Matrix2::identity() * 2.0);
        c.detection_prob = pd;
        c.clutter_rate = clutter;
        c
    }

    fn track(u: f64, v: f64) -> StateGaussian {
        StateGaussian::new(StateVector::new(u, 1.0, v, -1.0), Matrix4::from_diagonal(&Vector4::new(4.0, 2.0, 4.0, 2.0)))
            .unwrap()
    }

    fn set(points: &[(f64, f64)]) -> MeasurementSet {
        MeasurementSet::new(1.0, points.iter().map(|&(u, v)| Measurement::new(u, v)).collect())
    }

    fn n_choose_k(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    fn falling(m: usize, k: usize) -> usize {
        (0..k).map(|i| m - i).product()
    }

    #[test]
    fn tiny_event_sets() {
        assert_eq!(enumerate_events(1, 1, &[vec![true]]).len(), 2);
        assert_eq!(enumerate_events(2, 0, &[vec![], vec![]]).len(), 1);
        let all = enumerate_events(2, 2, &[vec![true, true], vec![true, true]]);
        assert_eq!(all.len(), 7);
    }

    #[test]
    fn event_count_matches_closed_form() {
        for n in 0..=4 {
            for m in 0..=4 {
                let gates = vec![vec![true; m]; n];
                let events = enumerate_events(n, m, &gates);
                let expected: usize = (0..=n.min(m)).map(|k| n_choose_k(n, k) * falling(m, k)).sum();
                assert_eq!(events.len(), expected, "n={n} m={m}");
                assert!(events.iter().all(|e| e.is_feasible(&gates)));
                let unique: std::collections::HashSet<_> = events.iter().collect();
                assert_eq!(unique.len(), events.len());
            }
        }
    }

    #[test]
    fn gating_restricts_events() {
        let gates = vec![vec![true, false], vec![false, false]];
        let events = enumerate_events(2, 2, &gates);
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn indicator_layout() {
        let ev = AssociationEvent { mapping: vec![Some(1), None] };
        let ind = ev.indicator(2);
        assert_eq!(ind.row(0).iter().copied().collect::<Vec<_>>(), vec![0, 0, 1]);
        assert_eq!(ind.row(1).iter().copied().collect::<Vec<_>>(), vec![1, 0, 0]);
    }

    #[test]
    fn certain_detection_without_clutter() {
        let cfg = config(1.0, 0.0);
        let t = [track(100.0, 100.0)];
        let (table, _) = pair_table(&t, &set(&[(100.0, 100.0)]), &cfg).unwrap();
        let beta = beta_matrix(&table.gates, &table.likelihoods, &cfg, None).unwrap();
        assert_eq!(beta.measurement(0, 0), 1.0);
        assert_eq!(beta.no_measurement(0), 0.0);
    }

    #[test]
    fn symmetric_geometry_equal_matchings() {
        let cfg = config(0.9, 1.0);
        let tracks = [track(100.0, 100.0), track(110.0, 100.0)];
        let z = set(&[(105.0, 97.0), (105.0, 103.0)]);
        let (table, _) = pair_table(&tracks, &z, &cfg).unwrap();
        let events = enumerate_events(2, 2, &table.gates);
        let w = |map: Vec<Option<usize>>| {
            let e = events.iter().find(|e| e.mapping == map).unwrap();
            event_probability(e, &table.likelihoods, &cfg, 2)
        };
        let a = w(vec![Some(0), Some(1)]);
        let b = w(vec![Some(1), Some(0)]);
        assert!((a - b).abs() <= 1e-15 * a.max(b));
    }

    #[test]
    fn rows_are_stochastic() {
        let cfg = config(0.8, 5.0);
        let tracks = [track(100.0, 100.0), track(104.0, 101.0), track(300.0, 50.0)];
        let z = set(&[(101.0, 100.0), (103.0, 99.0), (299.0, 52.0), (500.0, 400.0)]);
        let (table, _) = pair_table(&tracks, &z, &cfg).unwrap();
        let beta = beta_matrix(&table.gates, &table.likelihoods, &cfg, None).unwrap();
        for r in 0..3 {
            let s: f64 = beta.beta.row(r).sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(beta.beta.row(r).iter().all(|b| (0.0..=1.0).contains(b)));
        }
    }

    #[test]
    fn degenerate_weights_fall_back_to_empty_event() {
        // p_d = 1 forbids missed detections, and the gate admits no pair.
        let mut cfg = config(1.0, 0.0);
        cfg.gate_threshold = Some(1.0);
        let tracks = [track(100.0, 100.0)];
        let (table, _) = pair_table(&tracks, &set(&[(400.0, 400.0)]), &cfg).unwrap();
        let beta = beta_matrix(&table.gates, &table.likelihoods, &cfg, None).unwrap();
        assert_eq!(beta.no_measurement(0), 1.0);
        let out = jpdaf_update(&tracks, &set(&[(400.0, 400.0)]), &cfg).unwrap();
        assert_eq!(out[0], tracks[0]);
    }

    #[test]
    fn single_pair_collapses_to_kalman() {
        let cfg = config(1.0, 0.0);
        let t = track(200.0, 150.0);
        let z = set(&[(203.5, 148.25)]);
        let j = jpdaf_update(&[t], &z, &cfg).unwrap()[0];
        let k = kf_update(&t, &z.detections[0], &cfg).unwrap();
        assert!((j.mean - k.mean).abs().max() < 1e-12);
        assert!((j.covariance - k.covariance).abs().max() < 1e-12);
    }

    #[test]
    fn symmetric_innovations_cancel() {
        let cfg = config(0.9, 1.0);
        let t = track(200.0, 150.0);
        let z = set(&[(203.0, 150.0), (197.0, 150.0)]);
        let out = jpdaf_update(&[t], &z, &cfg).unwrap()[0];
        assert!((out.mean - t.mean).abs().max() < 1e-9);
        // Spread term inflates the along-axis variance above the single-measurement posterior.
        let single = kf_update(&t, &Measurement::new(200.0, 150.0), &cfg).unwrap();
        assert!(out.covariance[(0, 0)] > single.covariance[(0, 0)]);
        assert!(nalgebra::SymmetricEigen::new(out.covariance).eigenvalues.min() >= -1e-9);
    }

    #[test]
    fn empty_frame_leaves_tracks() {
        let cfg = config(0.9, 1.0);
        let tracks = [track(1.0, 2.0), track(50.0, 60.0)];
        assert_eq!(jpdaf_update(&tracks, &set(&[]), &cfg).unwrap(), tracks.to_vec());
    }

    #[test]
    fn expired_deadline_times_out() {
        let mut cfg = config(0.9, 1.0);
        cfg.gate_threshold = None;
        let tracks: Vec<_> = (0..9).map(|i| track(10.0 * i as f64, 0.0)).collect();
        let z = set(&(0..9).map(|i| (10.0 * i as f64, 0.0)).collect::<Vec<_>>());
        let past = Instant::now() - Duration::from_secs(1);
        let r = jpdaf_update_with_deadline(&tracks, &z, &cfg, Some(past));
        assert_eq!(r, Err(MttError::Timeout));
    }
}
