//! Discretization of the detection range into voxel/pillar grids and the
//! mapping between world coordinates and heatmap coordinates.
//!
//! Cells are half-open: the lower range bound is inclusive, the upper bound
//! exclusive, which is what makes the default ranges divide into exact cell
//! counts.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::dataset::PointCloud;
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("range [{min}, {max}] is not an integer multiple of cell size {size} on axis {axis}")]
    InexactDivision {
        axis: &'static str,
        min: f64,
        max: f64,
        size: f64,
    },
    #[error("axis {axis} must have positive extent and cell size")]
    DegenerateAxis { axis: &'static str },
    #[error("coordinate ({x}, {y}) outside grid range")]
    OutOfRange { x: f64, y: f64 },
}

/// Voxel discretization of the detection range.
///
/// `dims` is derived from ranges and cell sizes at construction; the
/// division must be exact to within 1e-6 cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridSpec<S>")]
pub struct GridSpec<S: Scalar> {
    pub x_range: [S; 2],
    pub y_range: [S; 2],
    pub z_range: [S; 2],
    /// `(dx, dy, dz)` meters.
    pub voxel_size: [S; 3],
    #[serde(skip_serializing)]
    dims: [usize; 3],
}

#[derive(Deserialize)]
struct RawGridSpec<S: Scalar> {
    x_range: [S; 2],
    y_range: [S; 2],
    z_range: [S; 2],
    voxel_size: [S; 3],
}

impl<S: Scalar> TryFrom<RawGridSpec<S>> for GridSpec<S> {
    type Error = GridError;

    fn try_from(r: RawGridSpec<S>) -> Result<Self, Self::Error> {
        GridSpec::new(r.x_range, r.y_range, r.z_range, r.voxel_size)
    }
}

fn axis_cells(axis: &'static str, min: f64, max: f64, size: f64) -> Result<usize, GridError> {
    if !max.is_finite() || !min.is_finite() || !size.is_finite() || max <= min || size <= 0.0 {
        return Err(GridError::DegenerateAxis { axis });
    }
    let q = (max - min) / size;
    let n = q.round();
    // Relative tolerance, so single-precision ranges cast from the same
    // decimal values still construct the same grid.
    if (q - n).abs() > 1e-6 * q.max(1.0) || n < 1.0 {
        return Err(GridError::InexactDivision {
            axis,
            min,
            max,
            size,
        });
    }
    Ok(n as usize)
}

impl<S: Scalar> GridSpec<S> {
    pub fn new(
        x_range: [S; 2],
        y_range: [S; 2],
        z_range: [S; 2],
        voxel_size: [S; 3],
    ) -> Result<Self, GridError> {
        // The exactness check runs in f64 so that it means the same thing for
        // every scalar type.
        let f = |v: S| v.to_f64().unwrap();
        let dims = [
            axis_cells("x", f(x_range[0]), f(x_range[1]), f(voxel_size[0]))?,
            axis_cells("y", f(y_range[0]), f(y_range[1]), f(voxel_size[1]))?,
            axis_cells("z", f(z_range[0]), f(z_range[1]), f(voxel_size[2]))?,
        ];
        Ok(Self {
            x_range,
            y_range,
            z_range,
            voxel_size,
            dims,
        })
    }

    /// `(nx, ny, nz)` cell counts.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dims[0], self.dims[1], self.dims[2])
    }

    /// Maps world `(x, y)` to continuous heatmap coordinates `(u, v)` at the
    /// given stride (cells grow by `stride` relative to the grid resolution).
    ///
    /// The map is affine: `u = (x - x_min) / (dx * stride)`. The grid minimum
    /// corner maps to `(0, 0)`.
    pub fn world_to_heatmap(&self, xy: [S; 2], stride: f64) -> Result<[S; 2], GridError> {
        if xy[0] < self.x_range[0]
            || xy[0] >= self.x_range[1]
            || xy[1] < self.y_range[0]
            || xy[1] >= self.y_range[1]
        {
            return Err(GridError::OutOfRange {
                x: xy[0].to_f64().unwrap_or(f64::NAN),
                y: xy[1].to_f64().unwrap_or(f64::NAN),
            });
        }
        let s = cast::<S>(stride);
        Ok([
            (xy[0] - self.x_range[0]) / (self.voxel_size[0] * s),
            (xy[1] - self.y_range[0]) / (self.voxel_size[1] * s),
        ])
    }

    /// Inverse of [`GridSpec::world_to_heatmap`] for in-range coordinates.
    pub fn heatmap_to_world(&self, uv: [S; 2], stride: f64) -> [S; 2] {
        let s = cast::<S>(stride);
        [
            self.x_range[0] + uv[0] * self.voxel_size[0] * s,
            self.y_range[0] + uv[1] * self.voxel_size[1] * s,
        ]
    }

    /// Heatmap dimensions `(width u-cells, height v-cells)` at a stride.
    /// Strides below 1 multiply the resolution; fractional results round up
    /// so the whole range stays covered.
    pub fn heatmap_dims(&self, stride: f64) -> (usize, usize) {
        let scale = |n: usize| ((n as f64) / stride).ceil() as usize;
        (scale(self.dims[0]), scale(self.dims[1]))
    }
}

/// The detection-range grid used throughout: x `[0, 30.72]` m, y
/// `[-20.48, 20.48]` m, z `[-4, 1]` m, voxels `(0.12, 0.16, 0.2)` m,
/// giving `(256, 256, 25)` cells.
pub fn default_grid<S: Scalar>() -> GridSpec<S> {
    GridSpec::new(
        [cast(0.0), cast(30.72)],
        [cast(-20.48), cast(20.48)],
        [cast(-4.0), cast(1.0)],
        [cast(0.12), cast(0.16), cast(0.2)],
    )
    .expect("default grid divides exactly")
}

/// Sparse voxel assignment of a point cloud.
///
/// Cell keys are `(ix, iy, iz)`; values are indices into the original cloud
/// in their original order, truncated at the per-cell cap.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub cells: BTreeMap<(u32, u32, u32), Vec<u32>>,
    /// Points outside the grid range.
    pub dropped_out_of_range: usize,
    /// In-range points discarded because their cell hit the cap.
    pub dropped_overflow: usize,
}

/// Default per-cell point cap for [`voxelize`] and [`pillarize`].
pub const DEFAULT_CELL_CAP: usize = 32;

fn cell_index<S: Scalar>(g: &GridSpec<S>, p: [S; 3]) -> Option<(u32, u32, u32)> {
    let ranges = [g.x_range, g.y_range, g.z_range];
    let mut idx = [0u32; 3];
    for axis in 0..3 {
        let v = p[axis];
        if v < ranges[axis][0] || v >= ranges[axis][1] {
            return None;
        }
        let i = ((v - ranges[axis][0]) / g.voxel_size[axis])
            .floor()
            .to_f64()
            .unwrap() as i64;
        if i < 0 || i as usize >= g.dims[axis] {
            return None;
        }
        idx[axis] = i as u32;
    }
    Some((idx[0], idx[1], idx[2]))
}

/// Assigns every in-range point to exactly one voxel via
/// `floor((p - min) / size)`; out-of-range points are counted, not kept.
/// Each cell keeps at most `cell_cap` points, first come first kept.
pub fn voxelize<S: Scalar>(pc: &PointCloud, g: &GridSpec<S>, cell_cap: usize) -> VoxelGrid {
    let mut cells: BTreeMap<(u32, u32, u32), Vec<u32>> = BTreeMap::new();
    let mut dropped = 0usize;
    let mut overflow = 0usize;
    for (i, p) in pc.points.iter().enumerate() {
        let world = [cast::<S>(p.x as f64), cast(p.y as f64), cast(p.z as f64)];
        match cell_index(g, world) {
            Some(key) => {
                let cell = cells.entry(key).or_default();
                if cell.len() < cell_cap {
                    cell.push(i as u32);
                } else {
                    overflow += 1;
                }
            }
            None => dropped += 1,
        }
    }
    VoxelGrid {
        cells,
        dropped_out_of_range: dropped,
        dropped_overflow: overflow,
    }
}

/// Vertical-column (pillar) assignment: like [`voxelize`] but grouped by the
/// BEV cell `(ix, iy)` only. Points outside the z range are still dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarGrid {
    pub cells: BTreeMap<(u32, u32), Vec<u32>>,
    pub dropped_out_of_range: usize,
    pub dropped_overflow: usize,
}

pub fn pillarize<S: Scalar>(pc: &PointCloud, g: &GridSpec<S>, cell_cap: usize) -> PillarGrid {
    let mut cells: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    let mut dropped = 0usize;
    let mut overflow = 0usize;
    for (i, p) in pc.points.iter().enumerate() {
        let world = [cast::<S>(p.x as f64), cast(p.y as f64), cast(p.z as f64)];
        match cell_index(g, world) {
            Some((ix, iy, _)) => {
                let cell = cells.entry((ix, iy)).or_default();
                if cell.len() < cell_cap {
                    cell.push(i as u32);
                } else {
                    overflow += 1;
                }
            }
            None => dropped += 1,
        }
    }
    PillarGrid {
        cells,
        dropped_out_of_range: dropped,
        dropped_overflow: overflow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Point, PointCloud};
    use proptest::prelude::*;

    fn cloud(points: &[[f32; 3]]) -> PointCloud {
        PointCloud {
            points: points
                .iter()
                .map(|p| Point {
                    x: p[0],
                    y: p[1],
                    z: p[2],
                    intensity: 0.5,
                })
                .collect(),
        }
    }

    #[test]
    fn default_grid_dims() {
        let g = default_grid::<f64>();
        assert_eq!(g.dims(), (256, 256, 25));
        // Must also hold at single precision.
        let g32 = default_grid::<f32>();
        assert_eq!(g32.dims(), (256, 256, 25));
    }

    #[test]
    fn inexact_division_fails() {
        let r = GridSpec::new([0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [0.3, 0.5, 0.5]);
        assert!(matches!(
            r,
            Err(GridError::InexactDivision { axis: "x", .. })
        ));
    }

    /// Grid whose bounds and cell size have exact binary representations,
    /// so boundary semantics are testable at the exact coordinates.
    fn exact_grid() -> GridSpec<f64> {
        GridSpec::new([0.0, 16.0], [-16.0, 16.0], [-4.0, 1.0], [0.25, 0.25, 0.25]).unwrap()
    }

    #[test]
    fn range_minimum_maps_to_cell_zero() {
        let v = voxelize(
            &cloud(&[[0.0, -16.0, -4.0]]),
            &exact_grid(),
            DEFAULT_CELL_CAP,
        );
        assert_eq!(v.cells.get(&(0, 0, 0)).map(Vec::len), Some(1));
        assert_eq!(v.dropped_out_of_range, 0);
        // Same rule on the default grid's minimum corner.
        let g = default_grid::<f64>();
        let v = voxelize(&cloud(&[[0.0, -20.48, -4.0]]), &g, DEFAULT_CELL_CAP);
        assert_eq!(v.cells.get(&(0, 0, 0)).map(Vec::len), Some(1));
    }

    #[test]
    fn upper_bound_exclusive() {
        let v = voxelize(&cloud(&[[16.0, 0.0, 0.0]]), &exact_grid(), DEFAULT_CELL_CAP);
        assert!(v.cells.is_empty());
        assert_eq!(v.dropped_out_of_range, 1);
    }

    #[test]
    fn heatmap_corner_and_center() {
        let g = default_grid::<f64>();
        for stride in [2.0, 1.0, 0.5] {
            let corner = g.world_to_heatmap([0.0, -20.48], stride).unwrap();
            assert_eq!(corner, [0.0, 0.0]);
        }
        let center = g.world_to_heatmap([15.36, 0.0], 1.0).unwrap();
        assert!((center[0] - 128.0).abs() < 1e-9);
        assert!((center[1] - 128.0).abs() < 1e-9);
    }

    #[test]
    fn heatmap_out_of_range() {
        let g = default_grid::<f64>();
        assert!(matches!(
            g.world_to_heatmap([-0.1, 0.0], 1.0),
            Err(GridError::OutOfRange { .. })
        ));
    }

    #[test]
    fn heatmap_dims_per_stride() {
        let g = default_grid::<f64>();
        assert_eq!(g.heatmap_dims(1.0), (256, 256));
        assert_eq!(g.heatmap_dims(2.0), (128, 128));
        assert_eq!(g.heatmap_dims(0.5), (512, 512));
    }

    #[test]
    fn cell_cap_counts_overflow() {
        let g = default_grid::<f64>();
        let pts: Vec<[f32; 3]> = (0..10).map(|_| [5.0, 0.0, 0.0]).collect();
        let v = voxelize(&cloud(&pts), &g, 4);
        assert_eq!(v.cells.values().next().unwrap().len(), 4);
        assert_eq!(v.dropped_overflow, 6);
    }

    proptest! {
        #[test]
        fn voxelization_conserves_points(
            pts in prop::collection::vec((-5.0..35.0f32, -25.0..25.0f32, -5.0..2.0f32), 0..300)
        ) {
            let g = default_grid::<f64>();
            let pc = cloud(&pts.iter().map(|&(x, y, z)| [x, y, z]).collect::<Vec<_>>());
            let v = voxelize(&pc, &g, DEFAULT_CELL_CAP);
            let kept: usize = v.cells.values().map(Vec::len).sum();
            prop_assert_eq!(kept + v.dropped_out_of_range + v.dropped_overflow, pts.len());
            // No duplicates across cells.
            let mut seen = std::collections::HashSet::new();
            for idx in v.cells.values().flatten() {
                prop_assert!(seen.insert(*idx));
            }
            // Pillars agree with voxels on what is in range.
            let p = pillarize(&pc, &g, usize::MAX);
            let pillar_kept: usize = p.cells.values().map(Vec::len).sum();
            prop_assert_eq!(pillar_kept, pts.len() - p.dropped_out_of_range);
            prop_assert_eq!(p.dropped_out_of_range, v.dropped_out_of_range);
        }

        #[test]
        fn world_heatmap_round_trip(
            x in 0.0..30.719f64, y in -20.48..20.479f64,
            stride in prop_oneof![Just(2.0), Just(1.0), Just(0.5)]
        ) {
            let g = default_grid::<f64>();
            let uv = g.world_to_heatmap([x, y], stride).unwrap();
            let back = g.heatmap_to_world(uv, stride);
            prop_assert!((back[0] - x).abs() < 0.12 / 1e6);
            prop_assert!((back[1] - y).abs() < 0.16 / 1e6);
        }

        #[test]
        fn heatmap_map_is_affine(
            ax in 0.0..30.0f64, ay in -20.0..20.0f64,
            bx in 0.0..30.0f64, by in -20.0..20.0f64,
            stride in prop_oneof![Just(2.0), Just(1.0), Just(0.5)]
        ) {
            let g = default_grid::<f64>();
            let a = g.world_to_heatmap([ax, ay], stride).unwrap();
            let b = g.world_to_heatmap([bx, by], stride).unwrap();
            let du = (a[0] - b[0]).abs();
            let dv = (a[1] - b[1]).abs();
            prop_assert!((du - (ax - bx).abs() / (0.12 * stride)).abs() < 1e-9);
            prop_assert!((dv - (ay - by).abs() / (0.16 * stride)).abs() < 1e-9);
        }
    }
}
