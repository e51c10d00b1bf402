//! Dataset characterization: local crowd density, per-frame crowd levels,
//! person-per-range, and point-count-versus-distance histograms.

use serde::{Deserialize, Serialize};

use crate::geometry::{point_distance_bev, Frame};
use crate::scalar::{cast, Scalar};

/// Per-frame crowd level derived solely from the pedestrian count:
/// fewer than 10, 10..20, 20..30, 30 or more. Boundary counts land in the
/// higher level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrowdLevel(pub u8);

pub fn crowd_level<S: Scalar>(frame: &Frame<S>) -> CrowdLevel {
    let n = frame.instances.len();
    CrowdLevel(match n {
        0..=9 => 0,
        10..=19 => 1,
        20..=29 => 2,
        _ => 3,
    })
}

/// Mean, over the pedestrians of a frame, of how many *other* pedestrians
/// stand within `radius` meters in BEV. Empty frames yield 0.
pub fn density_k<S: Scalar>(frame: &Frame<S>, radius: S) -> S {
    assert!(radius > S::zero(), "radius must be positive");
    let centers: Vec<[S; 2]> = frame
        .instances
        .iter()
        .map(|inst| inst.box3d.center_bev())
        .collect();
    if centers.is_empty() {
        return S::zero();
    }
    let mut total = 0usize;
    for (i, a) in centers.iter().enumerate() {
        total += centers
            .iter()
            .enumerate()
            .filter(|&(j, b)| j != i && point_distance_bev(*a, *b) <= radius)
            .count();
    }
    cast::<S>(total as f64) / cast(centers.len() as f64)
}

/// Pedestrian count divided by the LiDAR scan diameter (count per meter).
pub fn person_per_range<S: Scalar>(frame: &Frame<S>, scan_diameter: S) -> S {
    assert!(scan_diameter > S::zero(), "scan diameter must be positive");
    cast::<S>(frame.instances.len() as f64) / scan_diameter
}

/// Dataset-level density summary.
///
/// The density columns aggregate per pedestrian (every instance of every
/// frame weighs equally), so they match the per-frame [`density_k`] means
/// weighted by instance count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub density_2: f64,
    pub density_5: f64,
    pub density_10: f64,
    pub person_per_frame: f64,
    pub person_per_range: f64,
}

pub fn density_profile<S: Scalar>(frames: &[Frame<S>], scan_diameter: f64) -> DensityProfile {
    assert!(scan_diameter > 0.0, "scan diameter must be positive");
    let mut neighbor_totals = [0u64; 3];
    let radii = [2.0, 5.0, 10.0].map(cast::<S>);
    let mut instances = 0u64;
    for frame in frames {
        let centers: Vec<[S; 2]> = frame
            .instances
            .iter()
            .map(|inst| inst.box3d.center_bev())
            .collect();
        instances += centers.len() as u64;
        for (i, a) in centers.iter().enumerate() {
            for (j, b) in centers.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = point_distance_bev(*a, *b);
                for (k, r) in radii.iter().enumerate() {
                    if d <= *r {
                        neighbor_totals[k] += 1;
                    }
                }
            }
        }
    }
    let denom = instances.max(1) as f64;
    let person_per_frame = if frames.is_empty() {
        0.0
    } else {
        instances as f64 / frames.len() as f64
    };
    DensityProfile {
        density_2: neighbor_totals[0] as f64 / denom,
        density_5: neighbor_totals[1] as f64 / denom,
        density_10: neighbor_totals[2] as f64 / denom,
        person_per_frame,
        person_per_range: person_per_frame / scan_diameter,
    }
}

/// Instance counts in one distance bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    /// Bin covers `[bin_index * bin_width, (bin_index + 1) * bin_width)`.
    pub bin_index: usize,
    pub instance_count: usize,
    pub mean_points: f64,
}

/// Mean annotated point count per BEV-distance-to-origin bin. Only occupied
/// bins are returned, in ascending distance order.
pub fn points_vs_distance<S: Scalar>(frames: &[Frame<S>], bin_width: S) -> Vec<DistanceBin> {
    assert!(bin_width > S::zero(), "bin width must be positive");
    let mut sums: std::collections::BTreeMap<usize, (usize, u64)> = Default::default();
    for frame in frames {
        for inst in &frame.instances {
            let c = inst.box3d.center_bev();
            let d = point_distance_bev(c, [S::zero(), S::zero()]);
            let bin = (d / bin_width).floor().to_f64().unwrap() as usize;
            let entry = sums.entry(bin).or_insert((0, 0));
            entry.0 += 1;
            entry.1 += u64::from(inst.num_points);
        }
    }
    sums.into_iter()
        .map(|(bin_index, (count, total))| DistanceBin {
            bin_index,
            instance_count: count,
            mean_points: total as f64 / count as f64,
        })
        .collect()
}

/// Instance counts per occlusion level, summing to the total instance count.
pub fn occlusion_histogram<S: Scalar>(frames: &[Frame<S>]) -> [usize; 3] {
    let mut hist = [0usize; 3];
    for frame in frames {
        for inst in &frame.instances {
            hist[inst.occlusion.index()] += 1;
        }
    }
    hist
}

/// Frame counts per crowd level.
pub fn crowd_level_histogram<S: Scalar>(frames: &[Frame<S>]) -> [usize; 4] {
    let mut hist = [0usize; 4];
    for frame in frames {
        hist[crowd_level(frame).0 as usize] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Box3d, Instance, OcclusionLevel};
    use proptest::prelude::*;

    fn frame_at(centers: &[[f64; 2]]) -> Frame<f64> {
        frame_with_points(&centers.iter().map(|&c| (c, 50)).collect::<Vec<_>>())
    }

    fn frame_with_points(entries: &[([f64; 2], u32)]) -> Frame<f64> {
        Frame {
            frame_index: 0,
            timestamp: 0.0,
            pointcloud_ref: String::new(),
            instances: entries
                .iter()
                .enumerate()
                .map(|(i, &(c, num_points))| Instance {
                    track_id: i as u64,
                    box3d: Box3d::new(c[0], c[1], -1.0, 0.57, 0.6, 1.7, 0.0).unwrap(),
                    box2d: None,
                    occlusion: OcclusionLevel::try_from((i % 3) as u8).unwrap(),
                    num_points,
                })
                .collect(),
        }
    }

    #[test]
    fn lone_pedestrian_has_no_neighbors() {
        assert_eq!(density_k(&frame_at(&[[3.0, 0.0]]), 2.0), 0.0);
    }

    #[test]
    fn two_pedestrians_one_meter_apart() {
        let f = frame_at(&[[3.0, 0.0], [4.0, 0.0]]);
        assert_eq!(density_k(&f, 2.0), 1.0);
    }

    #[test]
    fn empty_frame_density_zero() {
        assert_eq!(density_k(&frame_at(&[]), 5.0), 0.0);
    }

    #[test]
    fn density_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let centers: Vec<[f64; 2]> = (0..50)
            .map(|_| [rng.random_range(0.0..30.0), rng.random_range(-20.0..20.0)])
            .collect();
        let f = frame_at(&centers);
        let got = density_k(&f, 5.0);

        let mut total = 0usize;
        for i in 0..centers.len() {
            for j in 0..centers.len() {
                if i != j {
                    let dx = centers[i][0] - centers[j][0];
                    let dy = centers[i][1] - centers[j][1];
                    if (dx * dx + dy * dy).sqrt() <= 5.0 {
                        total += 1;
                    }
                }
            }
        }
        let expect = total as f64 / centers.len() as f64;
        assert_eq!(got, expect);
    }

    #[test]
    fn crowd_level_boundaries_go_up() {
        let mk = |n: usize| frame_at(&vec![[5.0, 0.0]; n]);
        assert_eq!(crowd_level(&mk(0)), CrowdLevel(0));
        assert_eq!(crowd_level(&mk(9)), CrowdLevel(0));
        assert_eq!(crowd_level(&mk(10)), CrowdLevel(1));
        assert_eq!(crowd_level(&mk(20)), CrowdLevel(2));
        assert_eq!(crowd_level(&mk(30)), CrowdLevel(3));
        assert_eq!(crowd_level(&mk(31)), CrowdLevel(3));
    }

    #[test]
    fn person_per_range_values() {
        let f = frame_at(&vec![[5.0, 0.0]; 20]);
        assert_eq!(person_per_range(&f, 50.0), 0.4);
        assert_eq!(person_per_range(&frame_at(&[]), 50.0), 0.0);
        let f10 = frame_at(&[[5.0, 0.0]; 10]);
        assert_eq!(person_per_range(&f10, 100.0), 0.1);
    }

    #[test]
    fn points_histogram_single_instance() {
        let f = frame_with_points(&[([3.0, 0.0], 100)]);
        let bins = points_vs_distance(&[f], 5.0);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].bin_index, 0);
        assert_eq!(bins[0].mean_points, 100.0);
    }

    #[test]
    fn points_histogram_empty() {
        assert!(points_vs_distance::<f64>(&[], 5.0).is_empty());
    }

    #[test]
    fn occlusion_histogram_sums_to_total() {
        let f = frame_at(&[[5.0, 0.0]; 7]);
        let hist = occlusion_histogram(&[f.clone(), f]);
        assert_eq!(hist.iter().sum::<usize>(), 14);
    }

    proptest! {
        #[test]
        fn density_monotone_in_radius(
            centers in prop::collection::vec([0.0..30.0f64, -20.0..20.0f64], 0..40),
            r1 in 0.5..10.0f64, r2 in 0.5..10.0f64,
        ) {
            let f = frame_at(&centers);
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(density_k(&f, lo) <= density_k(&f, hi));
        }

        #[test]
        fn density_rigid_invariant(
            centers in prop::collection::vec([0.0..30.0f64, -20.0..20.0f64], 1..30),
            angle in -3.0..3.0f64, tx in -5.0..5.0f64, ty in -5.0..5.0f64,
        ) {
            let f = frame_at(&centers);
            let (s, c) = angle.sin_cos();
            let moved: Vec<[f64; 2]> = centers
                .iter()
                .map(|p| [p[0] * c - p[1] * s + tx, p[0] * s + p[1] * c + ty])
                .collect();
            let g = frame_at(&moved);
            let a = density_k(&f, 5.0);
            let b = density_k(&g, 5.0);
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn profile_densities_monotone(
            centers in prop::collection::vec([0.0..30.0f64, -20.0..20.0f64], 0..30),
        ) {
            let f = frame_at(&centers);
            let p = density_profile(&[f], 50.0);
            prop_assert!(p.density_2 <= p.density_5);
            prop_assert!(p.density_5 <= p.density_10);
        }
    }
}
