//! Average precision and occlusion-stratified average recall over
//! center-distance matching.
//!
//! Detections matched per frame keep their scores; the pooled sweep is
//! ordered by descending score with ties broken by frame index then
//! detection index. AP integrates the precision/recall curve at 101 evenly
//! spaced recall points with precision interpolated as the running maximum
//! from the right; recall points beyond the curve contribute zero.

use crate::geometry::{Detection, DistanceMode, Instance, OcclusionLevel};
use crate::scalar::{cast, Scalar};

use super::matching::match_detections;
use super::EvalError;

fn check_aligned<A, B>(gt: &[A], det: &[B]) -> Result<(), EvalError> {
    if gt.len() != det.len() {
        return Err(EvalError::MisalignedFrames {
            gt: gt.len(),
            pred: det.len(),
        });
    }
    Ok(())
}

/// Pooled `(score, is_true_positive)` sweep entries in evaluation order,
/// plus the total ground-truth count.
fn sweep<S: Scalar>(
    gt_frames: &[Vec<Instance<S>>],
    det_frames: &[Vec<Detection<S>>],
    threshold: S,
    mode: DistanceMode,
) -> (Vec<(S, bool)>, usize) {
    let mut entries: Vec<(S, usize, usize, bool)> = Vec::new();
    let mut total_gt = 0usize;
    for (fi, (gt, dets)) in gt_frames.iter().zip(det_frames).enumerate() {
        total_gt += gt.len();
        let m = match_detections(gt, dets, threshold, mode);
        let mut tp = vec![false; dets.len()];
        for &(_, di, _) in &m.pairs {
            tp[di] = true;
        }
        for (di, det) in dets.iter().enumerate() {
            entries.push((det.score, fi, di, tp[di]));
        }
    }
    entries.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite scores")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    (
        entries.into_iter().map(|(s, _, _, tp)| (s, tp)).collect(),
        total_gt,
    )
}

/// Area under the interpolated precision/recall curve at one distance
/// threshold. Zero when there is no ground truth.
pub fn average_precision<S: Scalar>(
    gt_frames: &[Vec<Instance<S>>],
    det_frames: &[Vec<Detection<S>>],
    threshold: S,
    mode: DistanceMode,
) -> Result<S, EvalError> {
    check_aligned(gt_frames, det_frames)?;
    let (entries, total_gt) = sweep(gt_frames, det_frames, threshold, mode);
    if total_gt == 0 {
        return Ok(S::zero());
    }
    let gt_count = cast::<S>(total_gt as f64);
    let mut tp = 0usize;
    let mut curve: Vec<(S, S)> = Vec::with_capacity(entries.len());
    for (rank, (_, is_tp)) in entries.iter().enumerate() {
        if *is_tp {
            tp += 1;
        }
        let precision = cast::<S>(tp as f64) / cast((rank + 1) as f64);
        let recall = cast::<S>(tp as f64) / gt_count;
        curve.push((recall, precision));
    }

    // Right-to-left running max of precision.
    let mut running = S::zero();
    let mut interpolated: Vec<(S, S)> = Vec::with_capacity(curve.len());
    for &(recall, precision) in curve.iter().rev() {
        running = running.max(precision);
        interpolated.push((recall, running));
    }
    interpolated.reverse();

    let mut total = S::zero();
    for k in 0..=100 {
        let r = cast::<S>(k as f64 / 100.0);
        // First sweep point reaching recall >= r carries the running max.
        let p = interpolated
            .iter()
            .find(|&&(recall, _)| recall >= r)
            .map(|&(_, p)| p)
            .unwrap_or_else(S::zero);
        total += p;
    }
    Ok(total / cast(101.0))
}

/// Mean AP over the distance thresholds.
pub fn mean_ap<S: Scalar>(
    gt_frames: &[Vec<Instance<S>>],
    det_frames: &[Vec<Detection<S>>],
    thresholds: &[S],
    mode: DistanceMode,
) -> Result<S, EvalError> {
    assert!(!thresholds.is_empty(), "need at least one threshold");
    let mut total = S::zero();
    for &t in thresholds {
        total += average_precision(gt_frames, det_frames, t, mode)?;
    }
    Ok(total / cast(thresholds.len() as f64))
}

/// Average recall for one occlusion level: recall of level-`level` ground
/// truth under full-scene matching, averaged over the thresholds. `None`
/// when the level has no ground truth.
pub fn average_recall_occlusion<S: Scalar>(
    gt_frames: &[Vec<Instance<S>>],
    det_frames: &[Vec<Detection<S>>],
    level: OcclusionLevel,
    thresholds: &[S],
    mode: DistanceMode,
) -> Result<Option<S>, EvalError> {
    check_aligned(gt_frames, det_frames)?;
    assert!(!thresholds.is_empty(), "need at least one threshold");
    let total_level: usize = gt_frames
        .iter()
        .flatten()
        .filter(|i| i.occlusion == level)
        .count();
    if total_level == 0 {
        return Ok(None);
    }
    let mut sum = S::zero();
    for &t in thresholds {
        let mut matched_level = 0usize;
        for (gt, dets) in gt_frames.iter().zip(det_frames) {
            let m = match_detections(gt, dets, t, mode);
            matched_level += m
                .pairs
                .iter()
                .filter(|&&(gi, _, _)| gt[gi].occlusion == level)
                .count();
        }
        sum += cast::<S>(matched_level as f64) / cast(total_level as f64);
    }
    Ok(Some(sum / cast(thresholds.len() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gt_at(x: f64, y: f64, occ: u8) -> Instance<f64> {
        Instance {
            track_id: 0,
            box3d: Box3d::new(x, y, 0.0, 0.57, 0.6, 1.7, 0.0).unwrap(),
            box2d: None,
            occlusion: OcclusionLevel::try_from(occ).unwrap(),
            num_points: 60,
        }
    }

    fn det_at(x: f64, y: f64, score: f64) -> Detection<f64> {
        Detection::new(Box3d::new(x, y, 0.0, 0.57, 0.6, 1.7, 0.0).unwrap(), score).unwrap()
    }

    type Scene = (Vec<Vec<Instance<f64>>>, Vec<Vec<Detection<f64>>>);

    fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
        let frames = rng.random_range(1..4);
        let mut gt = Vec::new();
        let mut det = Vec::new();
        for _ in 0..frames {
            let n_gt = rng.random_range(0..10);
            let n_det = rng.random_range(0..12);
            gt.push(
                (0..n_gt)
                    .map(|_| {
                        gt_at(
                            rng.random_range(0.0..12.0),
                            rng.random_range(-6.0..6.0),
                            rng.random_range(0..3),
                        )
                    })
                    .collect(),
            );
            det.push(
                (0..n_det)
                    .map(|_| {
                        det_at(
                            rng.random_range(0.0..12.0),
                            rng.random_range(-6.0..6.0),
                            rng.random_range(0.0..1.0),
                        )
                    })
                    .collect(),
            );
        }
        (gt, det)
    }

    #[test]
    fn perfect_detector_scores_one() {
        let gt: Vec<Vec<Instance<f64>>> = vec![
            vec![gt_at(3.0, 1.0, 0), gt_at(8.0, -2.0, 1)],
            vec![gt_at(5.0, 4.0, 2)],
        ];
        let det: Vec<Vec<Detection<f64>>> = gt
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .map(|i| det_at(i.box3d.x, i.box3d.y, 1.0))
                    .collect()
            })
            .collect();
        for t in [0.25, 0.5, 1.0] {
            assert_eq!(
                average_precision(&gt, &det, t, DistanceMode::Euclid3d).unwrap(),
                1.0
            );
        }
        assert_eq!(
            mean_ap(&gt, &det, &[0.25, 0.5, 1.0], DistanceMode::Euclid3d).unwrap(),
            1.0
        );
        for level in OcclusionLevel::ALL {
            assert_eq!(
                average_recall_occlusion(
                    &gt,
                    &det,
                    level,
                    &[0.25, 0.5, 1.0],
                    DistanceMode::Euclid3d
                )
                .unwrap(),
                Some(1.0)
            );
        }
    }

    #[test]
    fn no_detections_scores_zero() {
        let gt = vec![vec![gt_at(3.0, 1.0, 0)]];
        let det: Vec<Vec<Detection<f64>>> = vec![vec![]];
        assert_eq!(
            average_precision(&gt, &det, 0.5, DistanceMode::Euclid3d).unwrap(),
            0.0
        );
        assert_eq!(
            average_recall_occlusion(
                &gt,
                &det,
                OcclusionLevel::None,
                &[0.5],
                DistanceMode::Euclid3d
            )
            .unwrap(),
            Some(0.0)
        );
    }

    #[test]
    fn absent_occlusion_level_is_none() {
        let gt = vec![vec![gt_at(3.0, 1.0, 0)]];
        let det = vec![vec![det_at(3.0, 1.0, 1.0)]];
        assert_eq!(
            average_recall_occlusion(
                &gt,
                &det,
                OcclusionLevel::Heavy,
                &[0.5],
                DistanceMode::Euclid3d
            )
            .unwrap(),
            None
        );
    }

    #[test]
    fn misaligned_frames_rejected() {
        let gt = vec![vec![gt_at(3.0, 1.0, 0)]];
        let det: Vec<Vec<Detection<f64>>> = vec![vec![], vec![]];
        assert_eq!(
            average_precision(&gt, &det, 0.5, DistanceMode::Euclid3d).unwrap_err(),
            EvalError::MisalignedFrames { gt: 1, pred: 2 }
        );
    }

    #[test]
    fn mean_of_known_ap_values() {
        // One gt; two detections where the false positive outranks the true
        // positive only at the small threshold, yielding distinct AP values.
        let gt = vec![vec![gt_at(5.0, 0.0, 0)]];
        let det = vec![vec![det_at(5.0, 0.4, 0.9), det_at(5.0, 0.0, 0.5)]];
        let ap_small = average_precision(&gt, &det, 0.25, DistanceMode::Euclid3d).unwrap();
        let ap_big = average_precision(&gt, &det, 0.5, DistanceMode::Euclid3d).unwrap();
        // Small threshold: first det misses, second hits at rank 2 -> p = 0.5.
        assert!((ap_small - 0.5).abs() < 1e-12);
        // Large threshold: first det hits at rank 1 -> p = 1.
        assert!((ap_big - 1.0).abs() < 1e-12);
        let m = mean_ap(&gt, &det, &[0.25, 0.5], DistanceMode::Euclid3d).unwrap();
        assert!((m - 0.75).abs() < 1e-12);
    }

    #[test]
    fn ap_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let (gt, det) = random_scene(&mut rng);
            let a = average_precision(&gt, &det, 0.25, DistanceMode::Euclid3d).unwrap();
            let b = average_precision(&gt, &det, 0.5, DistanceMode::Euclid3d).unwrap();
            let c = average_precision(&gt, &det, 1.0, DistanceMode::Euclid3d).unwrap();
            assert!(a <= b + 1e-12 && b <= c + 1e-12, "{a} {b} {c}");
        }
    }

    #[test]
    fn removing_isolated_true_positive_never_raises_ap() {
        // Restricted to true positives whose ground truth has no other
        // detection in range: removing one cannot promote a new match, so
        // the sweep only loses a true positive.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut checked = 0;
        while checked < 100 {
            let (gt, det) = random_scene(&mut rng);
            let threshold = 0.5;
            let m = match_detections(&gt[0], &det[0], threshold, DistanceMode::Euclid3d);
            let isolated = m.pairs.iter().find(|&&(gi, di, _)| {
                det[0].iter().enumerate().all(|(other, d)| {
                    other == di
                        || crate::geometry::center_distance(
                            &gt[0][gi].box3d,
                            &d.box3d,
                            DistanceMode::Euclid3d,
                        ) > threshold
                })
            });
            let Some(&(_, di, _)) = isolated else {
                continue;
            };
            checked += 1;
            let base = average_precision(&gt, &det, threshold, DistanceMode::Euclid3d).unwrap();
            let mut smaller = det.clone();
            smaller[0].remove(di);
            let shrunk =
                average_precision(&gt, &smaller, threshold, DistanceMode::Euclid3d).unwrap();
            assert!(shrunk <= base + 1e-12, "{shrunk} > {base}");
        }
    }

    #[test]
    fn far_low_score_detection_never_raises_ap() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let (gt, mut det) = random_scene(&mut rng);
            let base = average_precision(&gt, &det, 1.0, DistanceMode::Euclid3d).unwrap();
            // Far beyond every threshold, lower score than everything else.
            det[0].push(det_at(1000.0, 1000.0, 0.0));
            let padded = average_precision(&gt, &det, 1.0, DistanceMode::Euclid3d).unwrap();
            assert!(padded <= base + 1e-12, "{padded} > {base}");
        }
    }
}
