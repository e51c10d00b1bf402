//! Prediction filtering: greedy circle NMS in BEV and the minimum-point
//! rule that drops boxes containing too few LiDAR returns.

use serde::{Deserialize, Serialize};

use crate::dataset::PointCloud;
use crate::geometry::{point_distance_bev, Box3d, Detection};
use crate::scalar::{cast, Scalar};

/// Post-processing thresholds. Defaults: one surviving prediction per
/// 0.3 m disc, boxes with fewer than 5 points dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub radius: f64,
    pub min_points: u32,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            radius: 0.3,
            min_points: 5,
        }
    }
}

/// Greedy circle NMS: walk detections by descending score (ties keep input
/// order) and accept one only if its BEV center is at least `radius` from
/// every previously accepted center. Output preserves acceptance order.
pub fn circle_nms<S: Scalar>(dets: &[Detection<S>], radius: S) -> Vec<Detection<S>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .expect("finite scores")
    });
    let mut kept: Vec<Detection<S>> = Vec::new();
    for idx in order {
        let c = dets[idx].box3d.center_bev();
        let clear = kept
            .iter()
            .all(|k| point_distance_bev(k.box3d.center_bev(), c) >= radius);
        if clear {
            kept.push(dets[idx].clone());
        }
    }
    kept
}

/// Number of cloud points inside the oriented box, boundary inclusive.
pub fn count_points_in_box<S: Scalar>(pc: &PointCloud, b: &Box3d<S>) -> usize {
    let (sin_t, cos_t) = b.theta.sin_cos();
    let half = [b.l / cast(2.0), b.w / cast(2.0), b.h / cast(2.0)];
    pc.points
        .iter()
        .filter(|p| {
            let px = cast::<S>(p.x as f64) - b.x;
            let py = cast::<S>(p.y as f64) - b.y;
            let pz = cast::<S>(p.z as f64) - b.z;
            // Rotate into the box frame (by -theta).
            let local_x = px * cos_t + py * sin_t;
            let local_y = -px * sin_t + py * cos_t;
            local_x.abs() <= half[0] && local_y.abs() <= half[1] && pz.abs() <= half[2]
        })
        .count()
}

/// Keeps detections whose box contains at least `min_points` cloud points;
/// order preserved.
pub fn filter_min_points<S: Scalar>(
    dets: &[Detection<S>],
    pc: &PointCloud,
    min_points: u32,
) -> Vec<Detection<S>> {
    dets.iter()
        .filter(|d| count_points_in_box(pc, &d.box3d) >= min_points as usize)
        .cloned()
        .collect()
}
