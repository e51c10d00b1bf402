//! Domain types shared by every other module: oriented 3D boxes, annotated
//! pedestrian instances, frames, detections, trajectories, and the pure
//! geometry helpers that operate on them.
//!
//! Conventions: `x, y, z` are sensor-frame meters with `+z` up. Yaw `theta`
//! is measured counterclockwise about `+z` from the sensor `+x` axis and is
//! normalized to `(-pi, pi]`. BEV (bird's-eye view) drops the `z` component.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{cast, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box extent `{field}` must be positive, got {value}")]
    NonPositiveExtent { field: &'static str, value: f64 },
    #[error("field `{field}` must be finite")]
    NonFinite { field: &'static str },
    #[error("score must be within [0, 1], got {value}")]
    ScoreOutOfRange { value: f64 },
    #[error("occlusion level must be 0, 1 or 2, got {0}")]
    BadOcclusionLevel(u8),
    #[error("trajectory must contain at least one point")]
    EmptyTrajectory,
    #[error("trajectory timestamps must be strictly increasing (point {index})")]
    NonMonotonicTimestamps { index: usize },
}

/// Normalizes an angle to the interval `(-pi, pi]`.
pub fn normalize_angle<S: Scalar>(theta: S) -> S {
    let pi = cast::<S>(std::f64::consts::PI);
    let tau = cast::<S>(std::f64::consts::TAU);
    let mut t = theta % tau;
    if t > pi {
        t -= tau;
    } else if t <= -pi {
        t += tau;
    }
    t
}

/// Oriented 3D bounding box: center `(x, y, z)`, extents `(l, w, h)` along
/// the box-local x/y/z axes, yaw `theta` about vertical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox3d<S>")]
pub struct Box3d<S: Scalar> {
    pub x: S,
    pub y: S,
    pub z: S,
    pub l: S,
    pub w: S,
    pub h: S,
    pub theta: S,
}

#[derive(Deserialize)]
struct RawBox3d<S: Scalar> {
    x: S,
    y: S,
    z: S,
    l: S,
    w: S,
    h: S,
    theta: S,
}

impl<S: Scalar> TryFrom<RawBox3d<S>> for Box3d<S> {
    type Error = GeometryError;

    fn try_from(r: RawBox3d<S>) -> Result<Self, Self::Error> {
        Box3d::new(r.x, r.y, r.z, r.l, r.w, r.h, r.theta)
    }
}

impl<S: Scalar> Box3d<S> {
    /// Validates extents and finiteness; `theta` is normalized to `(-pi, pi]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(x: S, y: S, z: S, l: S, w: S, h: S, theta: S) -> Result<Self, GeometryError> {
        for (field, v) in [
            ("x", x),
            ("y", y),
            ("z", z),
            ("l", l),
            ("w", w),
            ("h", h),
            ("theta", theta),
        ] {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite { field });
            }
        }
        for (field, v) in [("l", l), ("w", w), ("h", h)] {
            if v <= S::zero() {
                return Err(GeometryError::NonPositiveExtent {
                    field,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self {
            x,
            y,
            z,
            l,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    /// BEV center `(x, y)`.
    pub fn center_bev(&self) -> [S; 2] {
        [self.x, self.y]
    }

    /// Diagonal of the `l x w` footprint in meters.
    pub fn footprint_diagonal(&self) -> S {
        (self.l * self.l + self.w * self.w).sqrt()
    }
}

/// Axis-aligned 2D image box: top-left corner `(x, y)` plus `w x h`, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox2d<S>")]
pub struct Box2d<S: Scalar> {
    pub x: S,
    pub y: S,
    pub w: S,
    pub h: S,
}

#[derive(Deserialize)]
struct RawBox2d<S: Scalar> {
    x: S,
    y: S,
    w: S,
    h: S,
}

impl<S: Scalar> TryFrom<RawBox2d<S>> for Box2d<S> {
    type Error = GeometryError;

    fn try_from(r: RawBox2d<S>) -> Result<Self, Self::Error> {
        Box2d::new(r.x, r.y, r.w, r.h)
    }
}

impl<S: Scalar> Box2d<S> {
    pub fn new(x: S, y: S, w: S, h: S) -> Result<Self, GeometryError> {
        for (field, v) in [("x", x), ("y", y), ("w", w), ("h", h)] {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite { field });
            }
        }
        for (field, v) in [("w", w), ("h", h)] {
            if v <= S::zero() {
                return Err(GeometryError::NonPositiveExtent {
                    field,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self { x, y, w, h })
    }
}

/// How much of a pedestrian's body is hidden from the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum OcclusionLevel {
    /// None of the body occluded.
    None,
    /// No more than half the body occluded.
    Partial,
    /// Over half the body occluded.
    Heavy,
}

impl OcclusionLevel {
    pub const ALL: [OcclusionLevel; 3] = [Self::None, Self::Partial, Self::Heavy];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<OcclusionLevel> for u8 {
    fn from(level: OcclusionLevel) -> u8 {
        level as u8
    }
}

impl TryFrom<u8> for OcclusionLevel {
    type Error = GeometryError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Self::None),
            1 => Ok(Self::Partial),
            2 => Ok(Self::Heavy),
            other => Err(GeometryError::BadOcclusionLevel(other)),
        }
    }
}

/// One annotated pedestrian in one frame.
///
/// `track_id` is the joint identity across sensors and frames. `num_points`
/// counts the LiDAR returns inside `box3d`; real-data annotations carry at
/// least 15 (smaller values are flagged by dataset validation, not rejected,
/// since predictions and synthetic data legitimately produce fewer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance<S: Scalar> {
    pub track_id: u64,
    pub box3d: Box3d<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box2d: Option<Box2d<S>>,
    pub occlusion: OcclusionLevel,
    pub num_points: u32,
}

/// One annotated time step of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame<S: Scalar> {
    pub frame_index: u32,
    /// Seconds; strictly increasing within a sequence, nominally 0.4 s apart.
    pub timestamp: S,
    /// Path of the LiDAR scan, relative to the dataset root.
    pub pointcloud_ref: String,
    pub instances: Vec<Instance<S>>,
}

/// A scored box prediction, optionally with a BEV velocity estimate (m/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<S: Scalar> {
    pub box3d: Box3d<S>,
    pub score: S,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[S; 2]>,
}

impl<S: Scalar> Detection<S> {
    pub fn new(box3d: Box3d<S>, score: S) -> Result<Self, GeometryError> {
        if !score.is_finite() {
            return Err(GeometryError::NonFinite { field: "score" });
        }
        if score < S::zero() || score > S::one() {
            return Err(GeometryError::ScoreOutOfRange {
                value: score.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self {
            box3d,
            score,
            velocity: None,
        })
    }

    pub fn with_velocity(mut self, velocity: [S; 2]) -> Result<Self, GeometryError> {
        if !(velocity[0].is_finite() && velocity[1].is_finite()) {
            return Err(GeometryError::NonFinite { field: "velocity" });
        }
        self.velocity = Some(velocity);
        Ok(self)
    }
}

/// Time-stamped BEV positions of one tracked pedestrian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S: Scalar> {
    pub track_id: u64,
    /// `(timestamp s, [x, y] m)`, strictly increasing timestamps.
    pub points: Vec<(S, [S; 2])>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn new(track_id: u64, points: Vec<(S, [S; 2])>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyTrajectory);
        }
        for (i, pair) in points.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(GeometryError::NonMonotonicTimestamps { index: i + 1 });
            }
        }
        Ok(Self { track_id, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Which components of the center distance to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Full `(x, y, z)` Euclidean distance.
    #[default]
    Euclid3d,
    /// Ground-plane `(x, y)` distance.
    Bev2d,
}

/// Center distance between two boxes under the given mode.
pub fn center_distance<S: Scalar>(a: &Box3d<S>, b: &Box3d<S>, mode: DistanceMode) -> S {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    match mode {
        DistanceMode::Euclid3d => {
            let dz = a.z - b.z;
            (dx * dx + dy * dy + dz * dz).sqrt()
        }
        DistanceMode::Bev2d => (dx * dx + dy * dy).sqrt(),
    }
}

/// BEV distance between two points.
pub fn point_distance_bev<S: Scalar>(a: [S; 2], b: [S; 2]) -> S {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Corners of the rotated `l x w` footprint, counterclockwise starting from
/// the box-local `(+l/2, +w/2)` corner.
pub fn box_corners_bev<S: Scalar>(b: &Box3d<S>) -> [[S; 2]; 4] {
    let half_l = b.l / cast(2.0);
    let half_w = b.w / cast(2.0);
    let (sin_t, cos_t) = b.theta.sin_cos();
    let local = [
        [half_l, half_w],
        [-half_l, half_w],
        [-half_l, -half_w],
        [half_l, -half_w],
    ];
    local.map(|[lx, ly]| [b.x + lx * cos_t - ly * sin_t, b.y + lx * sin_t + ly * cos_t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn boxf(x: f64, y: f64, z: f64) -> Box3d<f64> {
        Box3d::new(x, y, z, 0.57, 0.6, 1.7, 0.0).unwrap()
    }

    #[test]
    fn distance_identity() {
        let a = boxf(1.0, 2.0, 3.0);
        assert_eq!(center_distance(&a, &a, DistanceMode::Euclid3d), 0.0);
        assert_eq!(center_distance(&a, &a, DistanceMode::Bev2d), 0.0);
    }

    #[test]
    fn distance_3_4_5() {
        let a = boxf(0.0, 0.0, 0.0);
        let b = boxf(3.0, 4.0, 0.0);
        assert_abs_diff_eq!(center_distance(&a, &b, DistanceMode::Euclid3d), 5.0);
    }

    #[test]
    fn distance_modes_differ_in_z() {
        let a = boxf(0.0, 0.0, 0.0);
        let b = boxf(3.0, 4.0, 12.0);
        assert_abs_diff_eq!(center_distance(&a, &b, DistanceMode::Bev2d), 5.0);
        assert_abs_diff_eq!(center_distance(&a, &b, DistanceMode::Euclid3d), 13.0);
    }

    #[test]
    fn corners_axis_aligned() {
        let b = Box3d::new(0.0, 0.0, 0.0, 2.0, 1.0, 1.0, 0.0).unwrap();
        let c = box_corners_bev(&b);
        assert_abs_diff_eq!(c[0][0], 1.0);
        assert_abs_diff_eq!(c[0][1], 0.5);
        assert_abs_diff_eq!(c[1][0], -1.0);
        assert_abs_diff_eq!(c[1][1], 0.5);
        assert_abs_diff_eq!(c[2][0], -1.0);
        assert_abs_diff_eq!(c[2][1], -0.5);
        assert_abs_diff_eq!(c[3][0], 1.0);
        assert_abs_diff_eq!(c[3][1], -0.5);
    }

    #[test]
    fn corners_quarter_turn_swaps_extents() {
        let b = Box3d::new(0.0, 0.0, 0.0, 2.0, 1.0, 1.0, std::f64::consts::FRAC_PI_2).unwrap();
        let c = box_corners_bev(&b);
        for corner in c {
            assert!(corner[0].abs() < 0.5 + 1e-12);
            assert!(corner[1].abs() < 1.0 + 1e-12);
        }
        assert_abs_diff_eq!(c[0][0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c[0][1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn corners_eighth_turn_preserve_radius() {
        // Rotating the footprint moves every corner on a circle of radius
        // sqrt((l/2)^2 + (w/2)^2) about the center.
        let b = Box3d::new(0.0, 0.0, 0.0, 2.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4).unwrap();
        let expect = (1.0_f64 * 1.0 + 0.5 * 0.5).sqrt();
        for corner in box_corners_bev(&b) {
            let r = (corner[0] * corner[0] + corner[1] * corner[1]).sqrt();
            assert_abs_diff_eq!(r, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn occlusion_round_trip_and_domain() {
        for level in OcclusionLevel::ALL {
            assert_eq!(OcclusionLevel::try_from(u8::from(level)).unwrap(), level);
        }
        assert!(OcclusionLevel::try_from(3).is_err());
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(Box3d::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box3d::new(0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(Box3d::new(f64::NAN, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box2d::new(0.0, 0.0, 3.0, 0.0).is_err());
    }

    #[test]
    fn score_domain() {
        let b = boxf(0.0, 0.0, 0.0);
        assert!(Detection::new(b, 1.2).is_err());
        assert!(Detection::new(b, f64::NAN).is_err());
        assert!(Detection::new(b, 0.5).is_ok());
    }

    #[test]
    fn trajectory_invariants() {
        assert!(Trajectory::<f64>::new(0, vec![]).is_err());
        let bad = Trajectory::new(0, vec![(0.0, [0.0, 0.0]), (0.0, [1.0, 0.0])]);
        assert_eq!(
            bad.unwrap_err(),
            GeometryError::NonMonotonicTimestamps { index: 1 }
        );
    }

    fn arb_box() -> impl Strategy<Value = Box3d<f64>> {
        (
            -30.0..30.0f64,
            -30.0..30.0f64,
            -4.0..2.0f64,
            0.1..3.0f64,
            0.1..3.0f64,
            0.1..3.0f64,
            -10.0..10.0f64,
        )
            .prop_map(|(x, y, z, l, w, h, t)| Box3d::new(x, y, z, l, w, h, t).unwrap())
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in arb_box(), b in arb_box(), c in arb_box(),
                                mode in prop_oneof![Just(DistanceMode::Euclid3d), Just(DistanceMode::Bev2d)]) {
            let dab = center_distance(&a, &b, mode);
            let dba = center_distance(&b, &a, mode);
            let dac = center_distance(&a, &c, mode);
            let dcb = center_distance(&c, &b, mode);
            prop_assert!(dab >= 0.0);
            prop_assert_eq!(dab, dba);
            prop_assert_eq!(center_distance(&a, &a, mode), 0.0);
            prop_assert!(dab <= dac + dcb + 1e-9);
        }

        #[test]
        fn corners_rotation_equivariant(b in arb_box(), delta in -3.0..3.0f64) {
            let rotated = Box3d::new(b.x, b.y, b.z, b.l, b.w, b.h, b.theta + delta).unwrap();
            let base = box_corners_bev(&b);
            let moved = box_corners_bev(&rotated);
            let (s, c) = delta.sin_cos();
            for i in 0..4 {
                let rx = b.x + (base[i][0] - b.x) * c - (base[i][1] - b.y) * s;
                let ry = b.y + (base[i][0] - b.x) * s + (base[i][1] - b.y) * c;
                prop_assert!((moved[i][0] - rx).abs() < 1e-9);
                prop_assert!((moved[i][1] - ry).abs() < 1e-9);
            }
        }

        #[test]
        fn angle_normalization_preserves_corners(b in arb_box()) {
            let shifted = Box3d::new(b.x, b.y, b.z, b.l, b.w, b.h, b.theta + std::f64::consts::TAU).unwrap();
            let base = box_corners_bev(&b);
            let moved = box_corners_bev(&shifted);
            for i in 0..4 {
                prop_assert!((moved[i][0] - base[i][0]).abs() < 1e-9);
                prop_assert!((moved[i][1] - base[i][1]).abs() < 1e-9);
            }
        }

        #[test]
        fn normalized_angle_in_range(t in -100.0..100.0f64) {
            let n = normalize_angle(t);
            prop_assert!(n > -std::f64::consts::PI && n <= std::f64::consts::PI);
        }
    }
}
