//! Greedy score-ordered matching between ground truth and detections: each
//! detection, visited by descending score (ties keep input order), claims
//! the nearest still-unmatched ground truth within the distance threshold.

use crate::geometry::{center_distance, Detection, DistanceMode, Instance};
use crate::scalar::Scalar;

/// Outcome of matching one frame. Each ground truth and each detection
/// appears at most once across `pairs` and the unmatched lists.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult<S: Scalar> {
    /// `(gt index, det index, center distance)`.
    pub pairs: Vec<(usize, usize, S)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_det: Vec<usize>,
}

pub fn match_detections<S: Scalar>(
    gt: &[Instance<S>],
    dets: &[Detection<S>],
    threshold: S,
    mode: DistanceMode,
) -> MatchResult<S> {
    assert!(threshold > S::zero(), "threshold must be positive");
    let mut det_order: Vec<usize> = (0..dets.len()).collect();
    det_order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .expect("finite scores")
    });

    let mut gt_taken = vec![false; gt.len()];
    let mut det_matched = vec![false; dets.len()];
    let mut pairs = Vec::new();
    for &di in &det_order {
        let mut best: Option<(usize, S)> = None;
        for (gi, inst) in gt.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let d = center_distance(&inst.box3d, &dets[di].box3d, mode);
            if d <= threshold && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((gi, d));
            }
        }
        if let Some((gi, d)) = best {
            gt_taken[gi] = true;
            det_matched[di] = true;
            pairs.push((gi, di, d));
        }
    }
    MatchResult {
        pairs,
        unmatched_gt: (0..gt.len()).filter(|&i| !gt_taken[i]).collect(),
        unmatched_det: (0..dets.len()).filter(|&i| !det_matched[i]).collect(),
    }
}
