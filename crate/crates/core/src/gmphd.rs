//! Gaussian-mixture PHD filter.
//!
//! The intensity is a weighted Gaussian mixture whose total weight is the
//! expected target count. Births are adaptive: measurements that no existing
//! component explained in the previous frame seed new components. Every
//! component carries the label of the track it descends from. Merged clusters
//! keep the label of their heaviest member, a second heavy peak under one
//! label is split off under a fresh label, and extraction reports one
//! estimate per label, so track identity survives targets passing through
//! each other. A label that drops
//! out can be handed to a newly born track nearby via [`label_tracks`].

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::assignment::min_cost_assignment;
use crate::error::Result;
use crate::kalman::Innovation;
use crate::motion::{predict, StateCovariance, StateGaussian, StateVector, TrackState};
use crate::tracker::{Clock, FilterKind, Measurement, MeasurementSet, TrackEstimate, Tracker, TrackerConfig};

/// Label given to birth components until the tracker assigns a fresh one.
pub const UNLABELLED: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthModel {
    pub weight: f64,
    pub covariance: StateCovariance,
}

impl Default for BirthModel {
    fn default() -> Self {
        Self {
            weight: 0.1,
            covariance: Matrix4::from_diagonal(&Vector4::new(400.0, 100.0, 400.0, 100.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: StateVector,
    pub covariance: StateCovariance,
    pub label: usize,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: StateVector, covariance: StateCovariance) -> Self {
        Self { weight, mean, covariance, label: 0 }
    }

    pub fn with_label(self, label: usize) -> Self {
        Self { label, ..self }
    }

    fn gaussian(&self) -> StateGaussian {
        StateGaussian { mean: self.mean, covariance: self.covariance }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Intensity {
    pub components: Vec<GaussianComponent>,
}

impl Intensity {
    pub fn new(components: Vec<GaussianComponent>) -> Self {
        Self { components }
    }

    /// Expected number of targets.
    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Propagates every component through the shared motion model, scales
/// weights by the survival probability and appends one [`UNLABELLED`] birth
/// component per `births` entry (zero velocity).
pub fn phd_predict(v: &Intensity, omega: &Vector3<f64>, config: &TrackerConfig, births: &[Measurement]) -> Intensity {
    let ps = config.survival_prob;
    let mut components: Vec<GaussianComponent> = v
        .components
        .iter()
        .map(|c| {
            let g = predict(&c.gaussian(), omega, &config.model);
            GaussianComponent { weight: ps * c.weight, mean: g.mean, covariance: g.covariance, label: c.label }
        })
        .collect();
    let birth = &config.phd.birth;
    components.extend(births.iter().map(|m| {
        GaussianComponent::new(birth.weight, StateVector::new(m.point.u, 0.0, m.point.v, 0.0), birth.covariance)
            .with_label(UNLABELLED)
    }));
    Intensity { components }
}

/// Output of the corrector.
#[derive(Debug, Clone, PartialEq)]
pub struct PhdUpdate {
    /// `J` missed-detection copies followed by `J` updated components per
    /// measurement, in measurement order.
    pub intensity: Intensity,
    /// Per measurement, the summed weight of its updated components.
    pub detection_mass: Vec<f64>,
}

pub fn phd_update(v: &Intensity, z: &MeasurementSet, config: &TrackerConfig) -> Result<PhdUpdate> {
    let pd = config.detection_prob;
    let kappa = config.clutter_density();
    let n = v.len();

    let innovations = v
        .components
        .iter()
        .map(|c| Innovation::new(&c.gaussian(), &config.measurement_noise))
        .collect::<Result<Vec<_>>>()?;
    let corrected: Vec<StateCovariance> = v
        .components
        .iter()
        .zip(&innovations)
        .map(|(c, inn)| inn.corrected_covariance(&c.gaussian()))
        .collect();

    let mut components = Vec::with_capacity(n * (1 + z.len()));
    components.extend(v.components.iter().map(|c| GaussianComponent { weight: (1.0 - pd) * c.weight, ..*c }));

    let mut detection_mass = Vec::with_capacity(z.len());
    let mut scratch = vec![0.0; n];
    for meas in &z.detections {
        for ((w, c), inn) in scratch.iter_mut().zip(&v.components).zip(&innovations) {
            *w = pd * c.weight * inn.density.pdf(&inn.residual(meas));
        }
        let denom = kappa + scratch.iter().sum::<f64>();
        let mut mass = 0.0;
        for (l, c) in v.components.iter().enumerate() {
            let w = if denom > 0.0 { scratch[l] / denom } else { 0.0 };
            mass += w;
            let inn = &innovations[l];
            components.push(GaussianComponent {
                weight: w,
                mean: c.mean + inn.gain * inn.residual(meas),
                covariance: corrected[l],
                label: c.label,
            });
        }
        detection_mass.push(mass);
    }
    Ok(PhdUpdate { intensity: Intensity { components }, detection_mass })
}

/// Moment-matched combination of weighted components; the label of the
/// first member is kept.
fn moment_match(members: &[&GaussianComponent]) -> GaussianComponent {
    if let [single] = members {
        return **single;
    }
    let weight: f64 = members.iter().map(|c| c.weight).sum();
    let mean = members.iter().fold(StateVector::zeros(), |acc, c| acc + c.mean * c.weight) / weight;
    let covariance = members.iter().fold(Matrix4::zeros(), |acc, c| {
        let d = mean - c.mean;
        acc + (c.covariance + d * d.transpose()) * c.weight
    }) / weight;
    GaussianComponent { weight, mean, covariance, label: members[0].label }
}

/// Drops components below the truncation threshold, merges clusters within
/// the squared Mahalanobis merge threshold (measured in the covariance of the
/// heaviest remaining component) and keeps at most the configured number of
/// components. A cluster takes the label of its heaviest member; components
/// of other labels join it only when lighter than the extraction threshold.
pub fn prune_and_merge(v: &Intensity, config: &TrackerConfig) -> Intensity {
    let mut order: Vec<&GaussianComponent> = v
        .components
        .iter()
        .filter(|c| c.weight >= config.truncation_threshold && c.weight > 0.0)
        .collect();
    order.sort_by(|a, b| b.weight.total_cmp(&a.weight));

    let mut used = vec![false; order.len()];
    let mut merged = Vec::new();
    for i in 0..order.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let pivot = order[i];
        let inverse = pivot.covariance.try_inverse();
        let mut members = vec![pivot];
        for j in i + 1..order.len() {
            // Across labels only light components are absorbed, so two
            // confirmed tracks passing through each other stay distinct.
            let absorbable = order[j].label == pivot.label || order[j].weight < config.phd.extraction_threshold;
            if used[j] || !absorbable {
                continue;
            }
            let d = order[j].mean - pivot.mean;
            let close = match &inverse {
                Some(inv) => (d.transpose() * inv * d)[0] <= config.merge_threshold,
                None => d == StateVector::zeros(),
            };
            if close {
                used[j] = true;
                members.push(order[j]);
            }
        }
        merged.push(moment_match(&members));
    }
    merged.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    merged.truncate(config.phd.max_components);
    Intensity { components: merged }
}

/// One estimate per label whose summed weight exceeds the extraction
/// threshold, at the weight-normalised mean of that label's components. A
/// singleton group reports its component mean unchanged.
pub fn extract_states(v: &Intensity, config: &TrackerConfig) -> Vec<TrackEstimate> {
    let mut groups: BTreeMap<usize, Vec<&GaussianComponent>> = BTreeMap::new();
    for c in &v.components {
        groups.entry(c.label).or_default().push(c);
    }
    groups
        .into_iter()
        .filter(|(label, _)| *label != UNLABELLED)
        .filter(|(_, members)| members.iter().map(|c| c.weight).fold(0.0, f64::max) > config.phd.extraction_threshold)
        .map(|(label, members)| {
            let c = moment_match(&members);
            TrackEstimate { local_track_index: label, state: c.mean.into(), covariance: Some(c.covariance) }
        })
        .collect()
}

/// Carries labels from `previous` to `current` by minimum total pixel
/// distance, ignoring pairs farther apart than `cap`. Unmatched current
/// estimates receive fresh labels drawn from `next_label`.
pub fn label_tracks(
    previous: &[TrackEstimate],
    current: Vec<TrackEstimate>,
    cap: f64,
    next_label: &mut usize,
) -> Vec<TrackEstimate> {
    // Pairs beyond the cap cost more than any admissible matching.
    let forbidden = cap * (previous.len().max(current.len()) as f64 + 1.0) + 1.0;
    let cost: Vec<Vec<f64>> = current
        .iter()
        .map(|c| {
            previous
                .iter()
                .map(|p| {
                    let d = c.position().distance(&p.position());
                    if d <= cap {
                        d
                    } else {
                        forbidden
                    }
                })
                .collect()
        })
        .collect();
    let matching = if previous.is_empty() { vec![None; current.len()] } else { min_cost_assignment(&cost) };
    current
        .into_iter()
        .zip(matching)
        .enumerate()
        .map(|(i, (mut est, m))| {
            match m.filter(|&p| cost[i][p] <= cap) {
                Some(p) => est.local_track_index = previous[p].local_track_index,
                None => {
                    est.local_track_index = *next_label;
                    *next_label += 1;
                }
            }
            est
        })
        .collect()
}

#[derive(Debug, Clone)]
struct LabelMemory {
    estimate: TrackEstimate,
    seen_at: f64,
}

/// GM-PHD tracker with adaptive birth and label continuity.
#[derive(Debug, Clone)]
pub struct GmPhdTracker {
    config: TrackerConfig,
    intensity: Intensity,
    pending_births: Vec<Measurement>,
    births_applied: bool,
    /// Last report of every label, for handing dropped labels to re-born tracks.
    memory: BTreeMap<usize, LabelMemory>,
    /// Labels that have been reported at least once.
    reported: BTreeSet<usize>,
    next_label: usize,
    elapsed: f64,
    clock: Clock,
}

impl GmPhdTracker {
    pub fn new(config: TrackerConfig, initial: &[(TrackState, Matrix4<f64>)]) -> Result<Self> {
        config.validate()?;
        let components: Vec<_> = initial
            .iter()
            .enumerate()
            .map(|(i, (s, p))| GaussianComponent::new(1.0, s.to_vector(), *p).with_label(i))
            .collect();
        let memory = initial
            .iter()
            .enumerate()
            .map(|(i, (s, p))| {
                let estimate = TrackEstimate { local_track_index: i, state: *s, covariance: Some(*p) };
                (i, LabelMemory { estimate, seen_at: 0.0 })
            })
            .collect();
        Ok(Self {
            config,
            intensity: Intensity::new(components),
            pending_births: Vec::new(),
            births_applied: true,
            memory,
            reported: (0..initial.len()).collect(),
            next_label: initial.len(),
            elapsed: 0.0,
            clock: Clock::default(),
        })
    }

    pub fn intensity(&self) -> &Intensity {
        &self.intensity
    }

    /// Labels not in `live` that were reported recently, coasted to the
    /// current time at constant velocity.
    fn dropped_labels(&self, live: &BTreeSet<usize>) -> Vec<TrackEstimate> {
        self.memory
            .iter()
            .filter(|(label, m)| !live.contains(label) && self.elapsed - m.seen_at <= self.config.phd.label_memory_s)
            .map(|(_, m)| {
                let dt = self.elapsed - m.seen_at;
                let mut e = m.estimate.clone();
                e.state.p_u += e.state.pdot_u * dt;
                e.state.p_v += e.state.pdot_v * dt;
                e
            })
            .collect()
    }

    /// After merging, any further component of a label that is heavy enough
    /// to be extracted on its own is a separate cluster; it gets a fresh label
    /// and the heaviest component keeps the old one.
    fn split_labels(&mut self) {
        let threshold = self.config.phd.extraction_threshold;
        let mut seen = BTreeSet::new();
        // Components are sorted by descending weight.
        for c in &mut self.intensity.components {
            if !seen.insert(c.label) && c.weight > threshold {
                c.label = self.next_label;
                self.next_label += 1;
                seen.insert(c.label);
            }
        }
    }

    /// Labels first-time extractions, reusing a recently dropped label when
    /// one is close enough, and renames their components to match.
    fn resolve_new_labels(&mut self, extracted: Vec<TrackEstimate>) -> Vec<TrackEstimate> {
        let (known, fresh): (Vec<_>, Vec<_>) =
            extracted.into_iter().partition(|e| self.reported.contains(&e.local_track_index));
        if fresh.is_empty() {
            return known;
        }
        let live: BTreeSet<usize> = known.iter().map(|e| e.local_track_index).collect();
        let dropped = self.dropped_labels(&live);
        let originals: Vec<usize> = fresh.iter().map(|e| e.local_track_index).collect();
        let relabelled = label_tracks(&dropped, fresh, self.config.phd.label_distance_cap, &mut self.next_label);
        let rename: BTreeMap<usize, usize> =
            originals.iter().zip(&relabelled).map(|(&from, e)| (from, e.local_track_index)).collect();
        for c in &mut self.intensity.components {
            if let Some(&to) = rename.get(&c.label) {
                c.label = to;
            }
        }
        let mut out = known;
        out.extend(relabelled);
        out.sort_by_key(|e| e.local_track_index);
        out
    }
}

impl Tracker for GmPhdTracker {
    fn kind(&self) -> FilterKind {
        FilterKind::Gmphd
    }

    fn predict_step(&mut self, omega: &Vector3<f64>, dt: f64) -> Result<()> {
        self.clock.on_predict(dt)?;
        let mut cfg = self.config;
        cfg.model = cfg.model.with_dt(dt);
        let births = if self.births_applied {
            cfg.survival_prob = 1.0;
            Vec::new()
        } else {
            std::mem::take(&mut self.pending_births)
        };
        self.intensity = phd_predict(&self.intensity, omega, &cfg, &births);
        for c in &mut self.intensity.components {
            if c.label == UNLABELLED {
                c.label = self.next_label;
                self.next_label += 1;
            }
        }
        self.births_applied = true;
        self.elapsed += dt;
        Ok(())
    }

    fn update_step(&mut self, z: &MeasurementSet) -> Result<Vec<TrackEstimate>> {
        self.clock.on_update(z)?;
        let update = phd_update(&self.intensity, z, &self.config)?;
        self.pending_births = z
            .detections
            .iter()
            .zip(&update.detection_mass)
            .filter(|(_, &mass)| mass < self.config.phd.birth_responsibility_threshold)
            .map(|(m, _)| *m)
            .collect();
        self.births_applied = false;
        self.intensity = prune_and_merge(&update.intensity, &self.config);
        self.split_labels();

        let extracted = extract_states(&self.intensity, &self.config);
        let labelled = self.resolve_new_labels(extracted);
        let now = self.elapsed;
        for e in &labelled {
            self.reported.insert(e.local_track_index);
            self.memory.insert(e.local_track_index, LabelMemory { estimate: e.clone(), seen_at: now });
        }
        let memory_s = self.config.phd.label_memory_s;
        self.memory.retain(|_, m| now - m.seen_at <= memory_s);
        Ok(labelled)
    }

    fn estimates(&self) -> Vec<TrackEstimate> {
        extract_states(&self.intensity, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::kalman::kf_update;
    use crate::motion::ModelParams;
    use nalgebra::Matrix2;
    use std::f64::consts::PI;

    fn config(pd: f64, clutter: f64) -> TrackerConfig {
        let model = ModelParams::new(0.1, 1.0, CameraIntrinsics::default()).unwrap();
        let mut c = TrackerConfig::new(model, Matrix2::identity() * 2.0);
        c.detection_prob = pd;
        c.clutter_rate = clutter;
        c
    }

    fn comp(w: f64, u: f64, v: f64) -> GaussianComponent {
        GaussianComponent::new(w, StateVector::new(u, 0.0, v, 0.0), Matrix4::identity() * 3.0)
    }

    fn set(points: &[(f64, f64)]) -> MeasurementSet {
        MeasurementSet::new(1.0, points.iter().map(|&(u, v)| Measurement::new(u, v)).collect())
    }

    fn default_cov() -> Matrix4<f64> {
        crate::tracker::default_initial_covariance()
    }

    fn est(label: usize, u: f64, v: f64) -> TrackEstimate {
        TrackEstimate { local_track_index: label, state: TrackState::new(u, 0.0, v, 0.0), covariance: None }
    }

    #[test]
    fn certain_survival_keeps_weights() {
        let v = Intensity::new(vec![comp(0.7, 10.0, 10.0), comp(0.2, 50.0, 50.0)]);
        let out = phd_predict(&v, &Vector3::zeros(), &config(0.9, 1.0), &[]);
        assert_eq!(out.components.iter().map(|c| c.weight).collect::<Vec<_>>(), vec![0.7, 0.2]);
    }

    #[test]
    fn births_at_measurements() {
        let births = [Measurement::new(10.0, 20.0), Measurement::new(300.0, 5.0)];
        let out = phd_predict(&Intensity::default(), &Vector3::zeros(), &config(0.9, 1.0), &births);
        assert_eq!(out.len(), 2);
        assert_eq!(out.components[1].mean, StateVector::new(300.0, 0.0, 5.0, 0.0));
        assert_eq!(out.components[0].weight, 0.1);
    }

    #[test]
    fn prediction_shares_motion_model() {
        let cfg = config(0.9, 1.0);
        let c = GaussianComponent::new(1.0, StateVector::new(10.0, 4.0, 20.0, -3.0), Matrix4::identity());
        let out = phd_predict(&Intensity::new(vec![c]), &Vector3::zeros(), &cfg, &[]);
        let g = predict(&c.gaussian(), &Vector3::zeros(), &cfg.model);
        assert_eq!(out.components[0].mean, g.mean);
        assert_eq!(out.components[0].covariance, g.covariance);
    }

    #[test]
    fn empty_frame_scales_by_missed_detection() {
        let v = Intensity::new(vec![comp(0.8, 10.0, 10.0), comp(0.4, 50.0, 50.0)]);
        let out = phd_update(&v, &set(&[]), &config(0.9, 1.0)).unwrap().intensity;
        assert_eq!(out.len(), 2);
        for (a, b) in out.components.iter().zip(&v.components) {
            assert!((a.weight - 0.1 * b.weight).abs() < 1e-15);
            assert_eq!(a.mean, b.mean);
        }
    }

    #[test]
    fn single_component_certain_detection() {
        let cfg = config(1.0, 0.0);
        let c = comp(1.0, 100.0, 100.0);
        let z = set(&[(102.0, 99.0)]);
        let out = phd_update(&Intensity::new(vec![c]), &z, &cfg).unwrap().intensity;
        let updated = out.components[1];
        assert_eq!(updated.weight, 1.0);
        let kf = kf_update(&c.gaussian(), &z.detections[0], &cfg).unwrap();
        assert!((updated.mean - kf.mean).abs().max() < 1e-12);
    }

    #[test]
    fn weights_match_scalar_oracle() {
        // Two components, one measurement; covariances isotropic so the
        // innovation density reduces to a scalar expression.
        let cfg = config(0.9, 3.0);
        let (p, r) = (3.0, 2.0);
        let a = comp(0.7, 100.0, 100.0);
        let b = comp(0.5, 104.0, 97.0);
        let (zu, zv) = (101.0, 99.0);
        let q = |cu: f64, cv: f64| {
            let s = p + r;
            let d2 = ((zu - cu).powi(2) + (zv - cv).powi(2)) / s;
            (-0.5 * d2).exp() / (2.0 * PI * s)
        };
        let kappa = 3.0 / (640.0 * 480.0);
        let na = 0.9 * 0.7 * q(100.0, 100.0);
        let nb = 0.9 * 0.5 * q(104.0, 97.0);
        let out = phd_update(&Intensity::new(vec![a, b]), &set(&[(zu, zv)]), &cfg).unwrap();
        let w = &out.intensity.components;
        assert!((w[2].weight - na / (kappa + na + nb)).abs() < 1e-12);
        assert!((w[3].weight - nb / (kappa + na + nb)).abs() < 1e-12);
        assert!((w[0].weight - 0.1 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn update_component_count() {
        let v = Intensity::new(vec![comp(0.7, 100.0, 100.0), comp(0.5, 10.0, 9.0), comp(0.2, 0.0, 0.0)]);
        let z = set(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)]);
        let out = phd_update(&v, &z, &config(0.9, 1.0)).unwrap();
        assert_eq!(out.intensity.len(), 3 * 5);
        assert_eq!(out.detection_mass.len(), 4);
    }

    #[test]
    fn per_measurement_mass_is_one_without_clutter() {
        let v = Intensity::new(vec![comp(0.7, 100.0, 100.0), comp(0.5, 104.0, 97.0)]);
        let z = set(&[(101.0, 99.0), (103.0, 98.0)]);
        let out = phd_update(&v, &z, &config(1.0, 0.0)).unwrap();
        for m in out.detection_mass {
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation() {
        let mut cfg = config(0.9, 1.0);
        cfg.truncation_threshold = 1e-5;
        let v = Intensity::new(vec![comp(0.6, 0.0, 0.0), comp(1e-6, 300.0, 300.0)]);
        assert_eq!(prune_and_merge(&v, &cfg).len(), 1);
    }

    #[test]
    fn identical_components_merge() {
        let v = Intensity::new(vec![comp(0.3, 5.0, 5.0), comp(0.3, 5.0, 5.0)]);
        let out = prune_and_merge(&v, &config(0.9, 1.0));
        assert_eq!(out.len(), 1);
        assert!((out.components[0].weight - 0.6).abs() < 1e-15);
        assert_eq!(out.components[0].mean, v.components[0].mean);
        assert!((out.components[0].covariance - v.components[0].covariance).abs().max() < 1e-12);
    }

    #[test]
    fn moment_matching_adds_spread() {
        let mut cfg = config(0.9, 1.0);
        cfg.merge_threshold = 4.0;
        let a = GaussianComponent::new(0.5, StateVector::new(10.0, 0.0, 0.0, 0.0), Matrix4::identity());
        let b = GaussianComponent::new(0.5, StateVector::new(11.0, 0.0, 0.0, 0.0), Matrix4::identity());
        let out = prune_and_merge(&Intensity::new(vec![a, b]), &cfg);
        assert_eq!(out.len(), 1);
        let m = out.components[0];
        assert!((m.mean[0] - 10.5).abs() < 1e-12);
        let delta = StateVector::new(1.0, 0.0, 0.0, 0.0);
        let expected = Matrix4::identity() + delta * delta.transpose() * 0.25;
        assert!((m.covariance - expected).abs().max() < 1e-12);
    }

    #[test]
    fn distant_components_stay_apart() {
        let v = Intensity::new(vec![comp(0.5, 0.0, 0.0), comp(0.5, 100.0, 0.0)]);
        assert_eq!(prune_and_merge(&v, &config(0.9, 1.0)).len(), 2);
    }

    #[test]
    fn component_cap_keeps_heaviest() {
        let mut cfg = config(0.9, 1.0);
        cfg.phd.max_components = 2;
        let v = Intensity::new(vec![comp(0.1, 0.0, 0.0), comp(0.9, 100.0, 0.0), comp(0.5, 200.0, 0.0)]);
        let out = prune_and_merge(&v, &cfg);
        assert_eq!(out.components.iter().map(|c| c.weight).collect::<Vec<_>>(), vec![0.9, 0.5]);
    }

    #[test]
    fn extraction_threshold() {
        let cfg = config(0.9, 1.0);
        assert_eq!(extract_states(&Intensity::new(vec![comp(0.9, 1.0, 2.0)]), &cfg).len(), 1);
        let two = Intensity::new(vec![comp(0.9, 1.0, 2.0), comp(0.1, 50.0, 2.0).with_label(1)]);
        assert_eq!(extract_states(&two, &cfg).len(), 1);
        let pair = Intensity::new(vec![comp(0.6, 1.0, 2.0), comp(0.6, 50.0, 2.0).with_label(1)]);
        let e = extract_states(&pair, &cfg);
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].state.to_vector(), pair.components[0].mean);
        assert_eq!(e[1].state.to_vector(), pair.components[1].mean);
        assert_eq!(e[1].local_track_index, 1);
    }

    #[test]
    fn extraction_weights_means_within_a_label() {
        let cfg = config(0.9, 1.0);
        let v = Intensity::new(vec![comp(0.3, 0.0, 0.0).with_label(5), comp(0.1, 40.0, 8.0).with_label(5)]);
        let e = extract_states(&v, &cfg);
        assert!(e.is_empty(), "group weight 0.4 is below threshold");
        let v = Intensity::new(vec![comp(0.6, 0.0, 0.0).with_label(5), comp(0.2, 40.0, 8.0).with_label(5)]);
        let e = extract_states(&v, &cfg);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].local_track_index, 5);
        assert!((e[0].state.p_u - 10.0).abs() < 1e-12);
        assert!((e[0].state.p_v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn merging_respects_labels() {
        let cfg = config(0.9, 1.0);
        let v = Intensity::new(vec![comp(0.6, 5.0, 5.0), comp(0.5, 5.0, 5.0).with_label(1)]);
        assert_eq!(prune_and_merge(&v, &cfg).len(), 2);
        let v = Intensity::new(vec![comp(0.6, 5.0, 5.0), comp(0.2, 5.0, 5.0).with_label(1)]);
        let out = prune_and_merge(&v, &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out.components[0].label, 0);
    }

    #[test]
    fn merge_conserves_weight() {
        let cfg = config(0.9, 1.0);
        let v = Intensity::new(
            (0..12).map(|i| comp(0.05 + 0.01 * i as f64, (i % 3) as f64 * 0.5, (i % 4) as f64 * 0.3).with_label(i % 2)).collect(),
        );
        let out = prune_and_merge(&v, &cfg);
        assert!(out.len() < v.len());
        assert!((out.total_weight() - v.total_weight()).abs() < 1e-12);
    }

    #[test]
    fn crossing_targets_keep_their_labels() {
        // Two targets pass through the same point with distinct velocities.
        let mut cfg = config(0.97, 1.0);
        cfg.model.accel_noise = 100.0;
        let p0 = default_cov();
        let init = [
            (TrackState::new(100.0, 20.0, 100.0, 0.0), p0),
            (TrackState::new(100.0, 0.0, 140.0, -20.0), p0),
        ];
        let mut trk = GmPhdTracker::new(cfg, &init).unwrap();
        let mut last = Vec::new();
        for k in 1..=40 {
            trk.predict_step(&Vector3::zeros(), 0.1).unwrap();
            let t = k as f64 * 0.1;
            let z = MeasurementSet::new(
                t,
                vec![Measurement::new(100.0 + 20.0 * t, 100.0), Measurement::new(100.0, 140.0 - 20.0 * t)],
            );
            last = trk.update_step(&z).unwrap();
        }
        let by_label: BTreeMap<_, _> = last.iter().map(|e| (e.local_track_index, e.position())).collect();
        assert!((by_label[&0].u - 180.0).abs() < 2.0, "{by_label:?}");
        assert!((by_label[&1].v - 60.0).abs() < 2.0, "{by_label:?}");
    }

    #[test]
    fn dropped_label_is_reused_by_rebirth() {
        let cfg = config(0.9, 1.0);
        let init = [(TrackState::new(200.0, 0.0, 200.0, 0.0), default_cov())];
        let mut trk = GmPhdTracker::new(cfg, &init).unwrap();
        let mut t = 0.0;
        let mut step = |trk: &mut GmPhdTracker, z: Vec<Measurement>| {
            trk.predict_step(&Vector3::zeros(), 0.1).unwrap();
            t += 0.1;
            trk.update_step(&MeasurementSet::new(t, z)).unwrap()
        };
        for _ in 0..3 {
            step(&mut trk, vec![Measurement::new(200.0, 200.0)]);
        }
        // The target vanishes long enough for its component to be truncated…
        for _ in 0..8 {
            assert!(step(&mut trk, vec![]).is_empty());
        }
        assert!(trk.intensity().is_empty());
        // …and reappears nearby; the birth inherits the dropped label.
        let mut out = Vec::new();
        for _ in 0..6 {
            out = step(&mut trk, vec![Measurement::new(205.0, 198.0)]);
        }
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].local_track_index, 0);
    }

    #[test]
    fn labels_persist_and_spawn() {
        let prev = vec![est(4, 10.0, 10.0), est(7, 200.0, 200.0)];
        let mut next = 8;
        let out = label_tracks(&prev, vec![est(0, 200.0, 200.0), est(1, 10.0, 10.0)], 30.0, &mut next);
        assert_eq!(out.iter().map(|e| e.local_track_index).collect::<Vec<_>>(), vec![7, 4]);
        let out = label_tracks(&prev, vec![est(0, 10.0, 10.0), est(1, 500.0, 50.0)], 30.0, &mut next);
        assert_eq!(out.iter().map(|e| e.local_track_index).collect::<Vec<_>>(), vec![4, 8]);
        assert_eq!(next, 9);
    }

    #[test]
    fn labels_follow_min_cost_matching() {
        // Greedy nearest-first would pair (B, x) then (A, y) for a total of 7;
        // the min-cost pairing (A, x), (B, y) costs 5.
        let prev = vec![est(0, 0.0, 0.0), est(1, 3.0, 0.0)];
        let cur = vec![est(9, 2.0, 0.0), est(9, 6.0, 0.0)];
        let brute = |perm: [usize; 2]| -> f64 {
            cur.iter().zip(perm).map(|(c, p)| c.position().distance(&prev[p].position())).sum()
        };
        let best = if brute([0, 1]) <= brute([1, 0]) { [0, 1] } else { [1, 0] };
        let mut next = 2;
        let out = label_tracks(&prev, cur.clone(), 30.0, &mut next);
        assert_eq!(out[0].local_track_index, best[0]);
        assert_eq!(out[1].local_track_index, best[1]);
    }
}
