//! Accuracy metrics: position RMSE matched by global ID, identity switches
//! and consensus agreement.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::geometry::PixelPoint;
use crate::sim::GroundTruthFrame;

/// A track keeps its previous truth match while that target stays within
/// this many pixels, so near-coincident targets do not register as switches.
pub const SWITCH_PERSISTENCE_PX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateRecord {
    /// Tracker-local label.
    pub local: usize,
    /// Drone ID from consensus; `None` for tracks born after it ran.
    pub global: Option<u32>,
    pub point: PixelPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameEstimates {
    pub frame: usize,
    pub time: f64,
    pub estimates: Vec<EstimateRecord>,
}

impl FrameEstimates {
    /// The estimate scored for `drone`: lowest local label carrying that ID.
    pub fn for_target(&self, drone: u32) -> Option<&EstimateRecord> {
        self.estimates.iter().filter(|e| e.global == Some(drone)).min_by_key(|e| e.local)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunMetrics {
    /// Pixels; `None` for a target never scored.
    pub per_target_rmse: Vec<Option<f64>>,
    /// Mean of the per-target values that exist; NaN when none do.
    pub mean_rmse: f64,
    pub id_switch_count: usize,
    /// Target-frames where the target was visible but no estimate carried its ID.
    pub lost_track_frames: usize,
    pub consensus_agreement: f64,
    /// Seconds per association+update call.
    pub per_iteration_time: Vec<f64>,
}

impl RunMetrics {
    pub fn mean_iteration_time(&self) -> f64 {
        if self.per_iteration_time.is_empty() {
            return 0.0;
        }
        self.per_iteration_time.iter().sum::<f64>() / self.per_iteration_time.len() as f64
    }
}

fn time_key(t: f64) -> u64 {
    t.to_bits()
}

fn nearest_visible(truth: &GroundTruthFrame, p: &PixelPoint) -> Option<(usize, f64)> {
    truth
        .truth
        .iter()
        .enumerate()
        .filter(|(_, tp)| tp.visible)
        .map(|(i, tp)| (i, tp.pixel.expect("visible").distance(p)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

/// Scores estimates against ground truth. Frames are matched on timestamps,
/// so input order does not matter. Only tracks with a global ID take part in
/// switch counting.
pub fn compute_rmse(estimates: &[FrameEstimates], truth: &[GroundTruthFrame]) -> RunMetrics {
    let by_time: BTreeMap<u64, &FrameEstimates> = estimates.iter().map(|f| (time_key(f.time), f)).collect();
    let mut ordered: Vec<&GroundTruthFrame> = truth.iter().collect();
    ordered.sort_by(|a, b| a.time.total_cmp(&b.time));

    let n_targets = ordered.iter().map(|f| f.truth.len()).max().unwrap_or(0);
    let mut sq = vec![0.0; n_targets];
    let mut count = vec![0usize; n_targets];
    let mut lost = 0;
    let mut matched: BTreeMap<usize, usize> = BTreeMap::new();
    let mut switches = 0;
    let mut agreement = None;

    for gt in &ordered {
        let est = by_time.get(&time_key(gt.time));
        for (i, tp) in gt.truth.iter().enumerate() {
            if !tp.visible {
                continue;
            }
            match est.and_then(|f| f.for_target(i as u32)) {
                Some(e) => {
                    let p = tp.pixel.expect("visible");
                    sq[i] += (e.point.u - p.u).powi(2) + (e.point.v - p.v).powi(2);
                    count[i] += 1;
                }
                None => lost += 1,
            }
        }
        let Some(est) = est else { continue };

        if agreement.is_none() {
            let scored: Vec<_> = est.estimates.iter().filter(|e| e.global.is_some()).collect();
            let correct = scored
                .iter()
                .filter(|e| nearest_visible(gt, &e.point).map(|(i, _)| i as u32) == e.global)
                .count();
            agreement = Some(if scored.is_empty() { 0.0 } else { correct as f64 / scored.len() as f64 });
        }

        for e in est.estimates.iter().filter(|e| e.global.is_some()) {
            let kept = matched.get(&e.local).copied().filter(|&prev| {
                let tp = gt.truth.get(prev);
                tp.is_some_and(|tp| tp.visible && tp.pixel.expect("visible").distance(&e.point) <= SWITCH_PERSISTENCE_PX)
            });
            let now = kept.or_else(|| nearest_visible(gt, &e.point).map(|(i, _)| i));
            if let Some(now) = now {
                if matched.insert(e.local, now).is_some_and(|prev| prev != now) {
                    switches += 1;
                }
            }
        }
    }

    let per_target_rmse: Vec<Option<f64>> =
        sq.iter().zip(&count).map(|(&s, &c)| (c > 0).then(|| (s / c as f64).sqrt())).collect();
    let scored: Vec<f64> = per_target_rmse.iter().flatten().copied().collect();
    let mean_rmse = if scored.is_empty() { f64::NAN } else { scored.iter().sum::<f64>() / scored.len() as f64 };
    RunMetrics {
        per_target_rmse,
        mean_rmse,
        id_switch_count: switches,
        lost_track_frames: lost,
        consensus_agreement: agreement.unwrap_or(0.0),
        per_iteration_time: Vec::new(),
    }
}
