//! Perception consensus: maps local track indices to global drone IDs by
//! minimum re-projection error of a one-time broadcast of initial 3D poses.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MttError, Result};
use crate::geometry::{project, CameraIntrinsics, ObserverPose, PixelPoint};
use crate::tracker::TrackEstimate;

/// One broadcast record: a drone's initial position in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadcastEntry {
    pub drone_id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BroadcastEntry {
    pub fn new(drone_id: u32, position: Vector3<f64>) -> Self {
        Self { drone_id, x: position.x, y: position.y, z: position.z }
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::new(self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InitBroadcast {
    pub entries: Vec<BroadcastEntry>,
}

impl InitBroadcast {
    pub fn new(entries: Vec<BroadcastEntry>) -> Result<Self> {
        let b = Self { entries };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.drone_id) {
                return Err(MttError::InvalidConfig(format!("duplicate drone_id {} in broadcast", e.drone_id)));
            }
            if !(e.x.is_finite() && e.y.is_finite() && e.z.is_finite()) {
                return Err(MttError::InvalidConfig(format!("non-finite position for drone {}", e.drone_id)));
            }
        }
        Ok(())
    }
}

/// Result of one consensus round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalAssignment {
    /// Local track index → drone ID; `None` marks an unassigned track.
    pub mapping: BTreeMap<usize, Option<u32>>,
    /// Pixel distance from each track to each broadcast entry (in broadcast
    /// order); `None` where the entry is behind the camera.
    pub residuals: BTreeMap<usize, Vec<Option<f64>>>,
}

impl GlobalAssignment {
    pub fn id_of(&self, local: usize) -> Option<u32> {
        self.mapping.get(&local).copied().flatten()
    }

    /// Drone IDs claimed by more than one track, ascending.
    pub fn duplicates(&self) -> Vec<u32> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for id in self.mapping.values().flatten() {
            *counts.entry(*id).or_default() += 1;
        }
        counts.into_iter().filter(|&(_, n)| n > 1).map(|(id, _)| id).collect()
    }

    pub fn unassigned(&self) -> Vec<usize> {
        self.mapping.iter().filter(|(_, id)| id.is_none()).map(|(&t, _)| t).collect()
    }
}

/// Row-wise argmin of the re-projection error. Ties go to the lowest drone
/// ID. Two tracks may receive the same ID; such duplicates are reported by
/// [`GlobalAssignment::duplicates`] rather than repaired. When there are more
/// tracks than broadcast entries, the tracks with the largest minimum
/// residual beyond the entry count are left unassigned.
pub fn assign_ids(
    tracks: &[TrackEstimate],
    broadcast: &InitBroadcast,
    observer: &ObserverPose,
    k: &CameraIntrinsics,
) -> GlobalAssignment {
    let projections: Vec<Option<PixelPoint>> =
        broadcast.entries.iter().map(|e| project(&e.position(), observer, k).ok()).collect();

    let mut out = GlobalAssignment::default();
    let mut best: Vec<(f64, usize)> = Vec::new();
    for t in tracks {
        let pos = t.position();
        let row: Vec<Option<f64>> = projections.iter().map(|p| p.map(|p| pos.distance(&p))).collect();
        let choice = row
            .iter()
            .zip(&broadcast.entries)
            .filter_map(|(d, e)| d.map(|d| (d, e.drone_id)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((d, _)) = choice {
            best.push((d, t.local_track_index));
        }
        out.mapping.insert(t.local_track_index, choice.map(|(_, id)| id));
        out.residuals.insert(t.local_track_index, row);
    }

    let n_entries = broadcast.entries.len();
    if best.len() > n_entries {
        best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, local) in &best[n_entries..] {
            out.mapping.insert(local, None);
        }
    }
    out
}

/// Re-runs consensus after the tracker re-initializes; the stale mapping is
/// discarded entirely.
pub fn reassign_on_reset(
    tracks: &[TrackEstimate],
    broadcast: &InitBroadcast,
    observer: &ObserverPose,
    k: &CameraIntrinsics,
) -> GlobalAssignment {
    assign_ids(tracks, broadcast, observer, k)
}
