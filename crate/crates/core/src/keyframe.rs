//! Co-visibility keyframe acceptance and the bounded keyframe buffer.

use crate::error::{Result, SlamError};
use crate::geometry::SE3Pose;
use crate::img::ScalarMap;
use crate::matcher::DescriptorGrid;
use crate::tracking::{Exposure, Frame};
use nalgebra::Vector3;
use std::collections::VecDeque;

/// Per-pixel visibility: accumulated opacity above the visibility threshold.
#[derive(Debug, Clone)]
pub struct VisibilityMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl VisibilityMask {
    /// Threshold the accumulated-opacity map at `alpha_vis`.
    pub fn from_accum(accum: &ScalarMap, alpha_vis: f64) -> Self {
        Self {
            width: accum.width,
            height: accum.height,
            bits: accum.data.iter().map(|&a| a > alpha_vis).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Keyframing configuration.
#[derive(Debug, Clone, Copy)]
pub struct KeyframeConfig {
    /// Visibility threshold on accumulated opacity.
    pub alpha_vis: f64,
    /// Accept a keyframe when the co-visibility IoU drops below this.
    pub tau_iou: f64,
    /// Minimum camera-center baseline (meters) for acceptance.
    pub t_min: f64,
    /// Minimum relative rotation (radians) for acceptance.
    pub theta_min: f64,
    /// Buffer capacity.
    pub capacity: usize,
    /// Neighbour-score distance weight, 1/m.
    pub lambda_dist: f64,
    /// Neighbour-score parallax weight, 1/rad.
    pub lambda_parallax: f64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        Self {
            alpha_vis: 0.5,
            tau_iou: 0.90,
            t_min: 0.05,
            theta_min: 5.0f64.to_radians(),
            capacity: 10,
            lambda_dist: 1.0,
            lambda_parallax: 1.0,
        }
    }
}

/// An accepted keyframe: observation, pose, exposure, visibility, and the
/// descriptor grid used for dense matching.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: u64,
    pub frame_index: usize,
    pub frame: Frame,
    pub pose: SE3Pose,
    pub exposure: Exposure,
    pub mask: VisibilityMask,
    pub descriptors: DescriptorGrid,
    /// Pose excluded from refinement (gauge / scale anchors).
    pub pose_frozen: bool,
}

/// Intersection-over-union of two visibility masks; 1 when both are empty.
pub fn covis_iou(a: &VisibilityMask, b: &VisibilityMask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(SlamError::DimensionMismatch(format!(
            "visibility masks {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Keyframe acceptance: co-visibility below threshold AND a non-degenerate
/// baseline (translation or rotation above the geometric bounds).
pub fn should_insert(
    current: &VisibilityMask,
    last_kf: &Keyframe,
    t_cur: &SE3Pose,
    cfg: &KeyframeConfig,
) -> bool {
    let iou = match covis_iou(current, &last_kf.mask) {
        Ok(v) => v,
        Err(_) => return false,
    };
    if iou >= cfg.tau_iou {
        return false;
    }
    let baseline = (t_cur.camera_center() - last_kf.pose.camera_center()).norm();
    let rotation = t_cur.rotation_angle_to(&last_kf.pose);
    baseline > cfg.t_min || rotation > cfg.theta_min
}

/// Ring buffer of recent keyframes; eviction is oldest-first.
#[derive(Debug, Clone, Default)]
pub struct KeyframeBuffer {
    entries: VecDeque<Keyframe>,
    capacity: usize,
    next_id: u64,
}

impl KeyframeBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { entries: VecDeque::with_capacity(capacity), capacity, next_id: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of keyframes ever accepted (not capped by capacity).
    pub fn total_accepted(&self) -> u64 {
        self.next_id
    }

    pub fn iter(&self) -> impl Iterator<Item = &Keyframe> {
        self.entries.iter()
    }

    pub fn latest(&self) -> Option<&Keyframe> {
        self.entries.back()
    }

    pub fn get_mut(&mut self, id: u64) -> Option<&mut Keyframe> {
        self.entries.iter_mut().find(|k| k.id == id)
    }

    pub fn get(&self, id: u64) -> Option<&Keyframe> {
        self.entries.iter().find(|k| k.id == id)
    }

    /// The most recent `n` keyframes, oldest first.
    pub fn tail(&self, n: usize) -> Vec<&Keyframe> {
        let skip = self.entries.len().saturating_sub(n);
        self.entries.iter().skip(skip).collect()
    }

    pub fn tail_ids(&self, n: usize) -> Vec<u64> {
        self.tail(n).iter().map(|k| k.id).collect()
    }

    /// Insert with an auto-assigned id; evicts the oldest past capacity.
    pub fn push(&mut self, mut kf: Keyframe) -> u64 {
        let id = self.next_id;
        kf.id = id;
        self.next_id += 1;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(kf);
        id
    }
}

/// Select up to `k` neighbours of `reference` maximizing
/// `-lambda_dist * baseline + lambda_parallax * angle(ref, candidate, pivot)`,
/// where the parallax angle is subtended at `pivot` (the map centroid).
pub fn select_neighbours<'a>(
    buffer: &'a KeyframeBuffer,
    reference: &Keyframe,
    pivot: &Vector3<f64>,
    k: usize,
    cfg: &KeyframeConfig,
) -> Result<Vec<&'a Keyframe>> {
    let mut scored: Vec<(f64, &Keyframe)> = Vec::new();
    let ref_center = reference.pose.camera_center();
    for cand in buffer.iter() {
        if cand.id == reference.id {
            continue;
        }
        let cc = cand.pose.camera_center();
        let dist = (cc - ref_center).norm();
        let u = ref_center - pivot;
        let v = cc - pivot;
        let angle = if u.norm() < 1e-12 || v.norm() < 1e-12 {
            0.0
        } else {
            u.normalize().dot(&v.normalize()).clamp(-1.0, 1.0).acos()
        };
        let score = -cfg.lambda_dist * dist + cfg.lambda_parallax * angle;
        scored.push((score, cand));
    }
    if scored.is_empty() {
        return Err(SlamError::EmptyBuffer);
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.id.cmp(&b.1.id)));
    Ok(scored.into_iter().take(k).map(|(_, kf)| kf).collect())
}
