//! The complete metric protocol: center-distance AP/mAP and
//! occlusion-stratified average recall for detection, CLEAR-style MOTA with
//! MT/ML for tracking, displacement errors for prediction, plus a minimal
//! velocity tracker so the tracking metrics run end to end.

mod detection;
mod matching;
mod prediction;
mod tracking;

pub use detection::{average_precision, average_recall_occlusion, mean_ap};
pub use matching::{match_detections, MatchResult};
pub use prediction::{fde, mde};
pub use tracking::{
    clear_mot, detections_from_gt, greedy_velocity_tracker, ClearMotResult, TrackedBox,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ProtocolInfo;
use crate::geometry::{Box3d, Frame, Trajectory};
use crate::scalar::Scalar;

/// Center-distance thresholds the detection metrics average over, meters.
pub const DEFAULT_DISTANCE_THRESHOLDS: [f64; 3] = [0.25, 0.5, 1.0];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ground truth has {gt} frames but predictions have {pred}")]
    MisalignedFrames { gt: usize, pred: usize },
    #[error("trajectories differ in length: gt {gt}, pred {pred}")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("trajectory timestamps diverge at step {index}")]
    MisalignedTimestamps { index: usize },
}

/// Structured metric results; sections that were not evaluated are omitted
/// from the serialized report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionMetrics>,
    pub protocol: ProtocolInfo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApEntry {
    pub threshold: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArEntry {
    pub occlusion_level: u8,
    pub ar: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub ap: Vec<ApEntry>,
    pub map: f64,
    /// Levels with no ground truth are omitted.
    pub ar_occlusion: Vec<ArEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub mota: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
    pub ids: usize,
    pub gt_count: usize,
    pub mt: f64,
    pub ml: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackDisplacement {
    pub track_id: u64,
    pub fde: f64,
    pub mde: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub mean_fde: f64,
    pub mean_mde: f64,
    pub per_track: Vec<TrackDisplacement>,
}

/// Per-frame `(track_id, box)` lists straight from annotated frames.
pub fn gt_tracks<S: Scalar>(frames: &[Frame<S>]) -> Vec<Vec<TrackedBox<S>>> {
    frames
        .iter()
        .map(|f| f.instances.iter().map(|i| (i.track_id, i.box3d)).collect())
        .collect()
}

/// BEV center trajectories per track id, in ascending id order.
pub fn gt_trajectories<S: Scalar>(frames: &[Frame<S>]) -> Vec<Trajectory<S>> {
    let mut by_id: std::collections::BTreeMap<u64, Vec<(S, [S; 2])>> = Default::default();
    for frame in frames {
        for inst in &frame.instances {
            by_id
                .entry(inst.track_id)
                .or_default()
                .push((frame.timestamp, inst.box3d.center_bev()));
        }
    }
    by_id
        .into_iter()
        .filter_map(|(id, points)| Trajectory::new(id, points).ok())
        .collect()
}

/// Convenience for tests and self-evaluation: boxes of a frame as tracked
/// boxes of a hypothetical perfect tracker.
pub fn boxes_with_ids<S: Scalar>(frame: &Frame<S>) -> Vec<(u64, Box3d<S>)> {
    frame
        .instances
        .iter()
        .map(|i| (i.track_id, i.box3d))
        .collect()
}
