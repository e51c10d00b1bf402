//! CLEAR-style tracking evaluation and a velocity-propagation baseline
//! tracker.
//!
//! Per frame the evaluator first re-confirms the previous frame's pairs that
//! are still within the gate, then assigns the remaining boxes by minimal
//! total distance (Hungarian). An identity switch is counted whenever a
//! ground truth's newly assigned prediction id differs from the last id it
//! was ever assigned. MOTA = 1 - (FP + IDS + FN) / GT with GT counted per
//! box over all frames; MT/ML are the fractions of ground-truth tracks
//! matched in more than 80% / fewer than 20% of their frames.

use std::collections::HashMap;

use crate::geometry::{center_distance, Box3d, Detection, DistanceMode, Frame};
use crate::scalar::Scalar;

use super::EvalError;

/// `(track_id, box)` as exchanged with trackers.
pub type TrackedBox<S> = (u64, Box3d<S>);

#[derive(Debug, Clone, PartialEq)]
pub struct ClearMotResult {
    pub mota: f64,
    pub fp: usize,
    pub false_negatives: usize,
    pub ids: usize,
    pub gt_count: usize,
    pub mt: f64,
    pub ml: f64,
}

const GATE: f64 = 1e12;
const PAD: f64 = 1e15;

/// Minimum-cost square assignment (Kuhn-Munkres with potentials).
/// Rectangular inputs are padded; returns `(row, col)` pairs for real cells.
fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let mut c = vec![vec![PAD; n]; n];
    for (i, row) in cost.iter().enumerate() {
        c[i][..cols].copy_from_slice(row);
    }

    // 1-indexed potentials; p[j] = row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut min_val = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let val = c[i0 - 1][j - 1] - u[i0] - v[j];
                if val < min_val[j] {
                    min_val[j] = val;
                    way[j] = j0;
                }
                if min_val[j] < delta {
                    delta = min_val[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_val[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            p[j0] = p[way[j0]];
            j0 = way[j0];
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    for (j, &i) in p.iter().enumerate().skip(1) {
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            pairs.push((i - 1, j - 1));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Runs the CLEAR protocol over aligned per-frame box lists.
pub fn clear_mot<S: Scalar>(
    gt_frames: &[Vec<TrackedBox<S>>],
    pred_frames: &[Vec<TrackedBox<S>>],
    threshold: S,
    mode: DistanceMode,
) -> Result<ClearMotResult, EvalError> {
    if gt_frames.len() != pred_frames.len() {
        return Err(EvalError::MisalignedFrames {
            gt: gt_frames.len(),
            pred: pred_frames.len(),
        });
    }
    let mut last_assigned: HashMap<u64, u64> = HashMap::new();
    let mut prev_pairs: HashMap<u64, u64> = HashMap::new();
    let mut frames_present: HashMap<u64, usize> = HashMap::new();
    let mut frames_matched: HashMap<u64, usize> = HashMap::new();
    let mut fp = 0usize;
    let mut false_negatives = 0usize;
    let mut ids = 0usize;
    let mut gt_count = 0usize;

    for (gt, preds) in gt_frames.iter().zip(pred_frames) {
        gt_count += gt.len();
        for &(gid, _) in gt {
            *frames_present.entry(gid).or_default() += 1;
        }

        let mut gt_free: Vec<bool> = vec![true; gt.len()];
        let mut pred_free: Vec<bool> = vec![true; preds.len()];
        let mut matched: Vec<(u64, u64)> = Vec::new();

        // Step 1: keep surviving pairs from the previous frame.
        for (gi, &(gid, gbox)) in gt.iter().enumerate() {
            let Some(&pid) = prev_pairs.get(&gid) else {
                continue;
            };
            let Some(pi) = preds.iter().position(|&(id, _)| id == pid) else {
                continue;
            };
            if !pred_free[pi] {
                continue;
            }
            if center_distance(&gbox, &preds[pi].1, mode) <= threshold {
                gt_free[gi] = false;
                pred_free[pi] = false;
                matched.push((gid, pid));
            }
        }

        // Step 2: Hungarian over the rest, gated by the threshold.
        let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| gt_free[i]).collect();
        let free_pred: Vec<usize> = (0..preds.len()).filter(|&i| pred_free[i]).collect();
        if !free_gt.is_empty() && !free_pred.is_empty() {
            let cost: Vec<Vec<f64>> = free_gt
                .iter()
                .map(|&gi| {
                    free_pred
                        .iter()
                        .map(|&pi| {
                            let d = center_distance(&gt[gi].1, &preds[pi].1, mode)
                                .to_f64()
                                .unwrap();
                            if d <= threshold.to_f64().unwrap() {
                                d
                            } else {
                                GATE
                            }
                        })
                        .collect()
                })
                .collect();
            for (ri, ci) in min_cost_assignment(&cost) {
                if cost[ri][ci] >= GATE {
                    continue;
                }
                let gi = free_gt[ri];
                let pi = free_pred[ci];
                gt_free[gi] = false;
                pred_free[pi] = false;
                matched.push((gt[gi].0, preds[pi].0));
            }
        }

        // Step 3: bookkeeping.
        for &(gid, pid) in &matched {
            if let Some(&last) = last_assigned.get(&gid) {
                if last != pid {
                    ids += 1;
                }
            }
            last_assigned.insert(gid, pid);
            *frames_matched.entry(gid).or_default() += 1;
        }
        fp += pred_free.iter().filter(|&&free| free).count();
        false_negatives += gt_free.iter().filter(|&&free| free).count();
        prev_pairs = matched.into_iter().collect();
    }

    let total_tracks = frames_present.len().max(1);
    let mut mt = 0usize;
    let mut ml = 0usize;
    for (gid, &present) in &frames_present {
        let matched = *frames_matched.get(gid).unwrap_or(&0);
        let ratio = matched as f64 / present as f64;
        if ratio > 0.8 {
            mt += 1;
        }
        if ratio < 0.2 {
            ml += 1;
        }
    }

    let mota = if gt_count == 0 {
        1.0
    } else {
        1.0 - (fp + ids + false_negatives) as f64 / gt_count as f64
    };
    Ok(ClearMotResult {
        mota,
        fp,
        false_negatives,
        ids,
        gt_count,
        mt: mt as f64 / total_tracks as f64,
        ml: ml as f64 / total_tracks as f64,
    })
}

struct Track<S: Scalar> {
    id: u64,
    center: [S; 2],
    velocity: [S; 2],
    misses: u32,
}

/// Tracking by detection: propagate live tracks by their velocity, greedily
/// associate the nearest detection within the threshold, open new ids for
/// the rest. A track survives one frame without a detection and terminates
/// after the second.
pub fn greedy_velocity_tracker<S: Scalar>(
    det_frames: &[(S, Vec<Detection<S>>)],
    threshold: S,
) -> Vec<Vec<TrackedBox<S>>> {
    let mut tracks: Vec<Track<S>> = Vec::new();
    let mut next_id = 0u64;
    let mut out = Vec::with_capacity(det_frames.len());
    let mut prev_time: Option<S> = None;

    for (time, dets) in det_frames {
        let dt = prev_time.map_or(S::zero(), |p| *time - p);
        prev_time = Some(*time);
        let prev_centers: Vec<[S; 2]> = tracks.iter().map(|t| t.center).collect();
        for t in tracks.iter_mut() {
            t.center[0] += t.velocity[0] * dt;
            t.center[1] += t.velocity[1] * dt;
        }

        // Candidate pairs sorted by distance, ties by track id then index.
        let mut cands: Vec<(S, usize, usize)> = Vec::new();
        for (ti, t) in tracks.iter().enumerate() {
            for (di, d) in dets.iter().enumerate() {
                let dx = t.center[0] - d.box3d.x;
                let dy = t.center[1] - d.box3d.y;
                let dist = (dx * dx + dy * dy).sqrt();
                if dist <= threshold {
                    cands.push((dist, ti, di));
                }
            }
        }
        cands.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then_with(|| tracks[a.1].id.cmp(&tracks[b.1].id))
                .then(a.2.cmp(&b.2))
        });

        let mut track_used = vec![false; tracks.len()];
        let mut det_used = vec![false; dets.len()];
        let mut frame_out: Vec<TrackedBox<S>> = Vec::new();
        for (_, ti, di) in cands {
            if track_used[ti] || det_used[di] {
                continue;
            }
            track_used[ti] = true;
            det_used[di] = true;
            let det = &dets[di];
            let measured = if dt > S::zero() {
                [
                    (det.box3d.x - prev_centers[ti][0]) / dt,
                    (det.box3d.y - prev_centers[ti][1]) / dt,
                ]
            } else {
                [S::zero(), S::zero()]
            };
            tracks[ti].velocity = det.velocity.unwrap_or(measured);
            tracks[ti].center = det.box3d.center_bev();
            tracks[ti].misses = 0;
            frame_out.push((tracks[ti].id, det.box3d));
        }

        for (di, det) in dets.iter().enumerate() {
            if det_used[di] {
                continue;
            }
            let id = next_id;
            next_id += 1;
            tracks.push(Track {
                id,
                center: det.box3d.center_bev(),
                velocity: det.velocity.unwrap_or([S::zero(), S::zero()]),
                misses: 0,
            });
            frame_out.push((id, det.box3d));
        }

        for (ti, t) in tracks.iter_mut().enumerate() {
            if ti < track_used.len() && !track_used[ti] {
                t.misses += 1;
            }
        }
        tracks.retain(|t| t.misses <= 1);
        frame_out.sort_by_key(|&(id, _)| id);
        out.push(frame_out);
    }
    out
}

/// Perfect detections derived from annotated frames: unit score, velocity
/// from the forward difference of each track's position.
pub fn detections_from_gt<S: Scalar>(frames: &[Frame<S>]) -> Vec<(S, Vec<Detection<S>>)> {
    let mut out = Vec::with_capacity(frames.len());
    for (fi, frame) in frames.iter().enumerate() {
        let mut dets = Vec::with_capacity(frame.instances.len());
        for inst in &frame.instances {
            let velocity = frames.get(fi + 1).and_then(|next| {
                let dt = next.timestamp - frame.timestamp;
                next.instances
                    .iter()
                    .find(|n| n.track_id == inst.track_id)
                    .map(|n| {
                        [
                            (n.box3d.x - inst.box3d.x) / dt,
                            (n.box3d.y - inst.box3d.y) / dt,
                        ]
                    })
            });
            let mut det = Detection::new(inst.box3d, S::one()).expect("valid gt box");
            if let Some(v) = velocity {
                det = det.with_velocity(v).expect("finite velocity");
            }
            dets.push(det);
        }
        out.push((frame.timestamp, dets));
    }
    out
}
