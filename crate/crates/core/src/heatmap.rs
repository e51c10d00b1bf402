//! Hierarchical Gaussian score maps: rendering ground-truth targets at
//! coarse/regular/fine resolution, the focal loss over score maps, and
//! decoding fine-level peaks back into detections.
//!
//! Score maps are `(height, width)` arrays indexed `[v, u]` where `u` runs
//! along world x and `v` along world y; cell `(v, u)` is sampled at
//! continuous heatmap coordinates `(u + 0.5, v + 0.5)`. The fine level also
//! carries a `(10, height, width)` regression volume with channels
//! `[off_u, off_v, z, l, w, h, sin yaw, cos yaw, vx, vy]` written at each
//! instance's nearest cell.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::Level;
use crate::bev::GridSpec;
use crate::geometry::{Detection, Instance};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("map shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("score map for {level:?} must have shape {expected:?}, got {got:?}")]
    BadLevelShape {
        level: Level,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("score values must lie in [0, 1]")]
    ScoreOutOfRange,
    #[error("regression volume must be finite with {expected} channels")]
    BadRegression { expected: usize },
}

/// Number of regression channels at the fine level.
pub const REG_CHANNELS: usize = 10;

/// Regression channel indices.
pub mod channel {
    pub const OFF_U: usize = 0;
    pub const OFF_V: usize = 1;
    pub const Z: usize = 2;
    pub const L: usize = 3;
    pub const W: usize = 4;
    pub const H: usize = 5;
    pub const SIN_YAW: usize = 6;
    pub const COS_YAW: usize = 7;
    pub const VEL_X: usize = 8;
    pub const VEL_Y: usize = 9;
}

/// Gaussian target shape and focal-loss constants.
///
/// The regular-level sigma is `max(sigma_min, sigma_factor * d)` where `d`
/// is the box footprint diagonal measured in regular cells; the fine level
/// doubles it and the coarse level halves it (clamped to `sigma_min`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianTargetParams {
    pub sigma_min: f64,
    pub sigma_factor: f64,
    pub focal_alpha: f64,
    pub focal_beta: f64,
}

impl Default for GaussianTargetParams {
    fn default() -> Self {
        Self {
            sigma_min: 1.0,
            sigma_factor: 1.0 / 6.0,
            focal_alpha: 2.0,
            focal_beta: 4.0,
        }
    }
}

/// Gaussian values below exp(-18) are not splatted.
const SPLAT_TRUNCATION_SIGMAS: f64 = 6.0;

/// Score maps at the three levels plus fine-level regression, tied to the
/// grid they were rendered on.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapPyramid<S: Scalar> {
    grid: GridSpec<S>,
    coarse: Array2<S>,
    regular: Array2<S>,
    fine: Array2<S>,
    regression: Array3<S>,
}

fn level_shape<S: Scalar>(grid: &GridSpec<S>, level: Level) -> (usize, usize) {
    let (w, h) = grid.heatmap_dims(level.stride());
    (h, w)
}

impl<S: Scalar> HeatmapPyramid<S> {
    pub fn new(
        grid: GridSpec<S>,
        coarse: Array2<S>,
        regular: Array2<S>,
        fine: Array2<S>,
        regression: Array3<S>,
    ) -> Result<Self, HeatmapError> {
        for (level, map) in [
            (Level::Coarse, &coarse),
            (Level::Regular, &regular),
            (Level::Fine, &fine),
        ] {
            let expected = level_shape(&grid, level);
            let got = (map.nrows(), map.ncols());
            if got != expected {
                return Err(HeatmapError::BadLevelShape {
                    level,
                    expected,
                    got,
                });
            }
            if map.iter().any(|v| !(*v >= S::zero() && *v <= S::one())) {
                return Err(HeatmapError::ScoreOutOfRange);
            }
        }
        let fine_shape = level_shape(&grid, Level::Fine);
        let rs = regression.shape();
        if rs[0] != REG_CHANNELS
            || (rs[1], rs[2]) != fine_shape
            || regression.iter().any(|v| !v.is_finite())
        {
            return Err(HeatmapError::BadRegression {
                expected: REG_CHANNELS,
            });
        }
        Ok(Self {
            grid,
            coarse,
            regular,
            fine,
            regression,
        })
    }

    pub fn grid(&self) -> &GridSpec<S> {
        &self.grid
    }

    pub fn score_map(&self, level: Level) -> &Array2<S> {
        match level {
            Level::Coarse => &self.coarse,
            Level::Regular => &self.regular,
            Level::Fine => &self.fine,
        }
    }

    pub fn regression(&self) -> &Array3<S> {
        &self.regression
    }

    /// Fraction of cells holding an exact-1 target at a level.
    pub fn positive_fraction(&self, level: Level) -> f64 {
        let map = self.score_map(level);
        let pos = map.iter().filter(|v| **v == S::one()).count();
        pos as f64 / map.len() as f64
    }
}

/// Output of [`render_targets`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTargets<S: Scalar> {
    pub pyramid: HeatmapPyramid<S>,
    /// Instances whose center fell outside the grid.
    pub skipped_out_of_range: usize,
}

fn sigma_regular<S: Scalar>(
    inst: &Instance<S>,
    grid: &GridSpec<S>,
    p: &GaussianTargetParams,
) -> f64 {
    let l_cells = (inst.box3d.l / grid.voxel_size[0]).to_f64().unwrap();
    let w_cells = (inst.box3d.w / grid.voxel_size[1]).to_f64().unwrap();
    let diag = (l_cells * l_cells + w_cells * w_cells).sqrt();
    p.sigma_min.max(p.sigma_factor * diag)
}

fn sigma_at(level: Level, sigma: f64, p: &GaussianTargetParams) -> f64 {
    match level {
        Level::Fine => 2.0 * sigma,
        Level::Regular => sigma,
        Level::Coarse => (sigma / 2.0).max(p.sigma_min),
    }
}

fn splat_gaussian<S: Scalar>(map: &mut Array2<S>, u0: f64, v0: f64, sigma: f64) {
    let (h, w) = (map.nrows(), map.ncols());
    let r = SPLAT_TRUNCATION_SIGMAS * sigma;
    let v_lo = ((v0 - r - 0.5).floor().max(0.0)) as usize;
    let v_hi = ((v0 + r + 0.5).ceil().min(h as f64 - 1.0)) as usize;
    let u_lo = ((u0 - r - 0.5).floor().max(0.0)) as usize;
    let u_hi = ((u0 + r + 0.5).ceil().min(w as f64 - 1.0)) as usize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for v in v_lo..=v_hi {
        for u in u_lo..=u_hi {
            let du = (u as f64 + 0.5) - u0;
            let dv = (v as f64 + 0.5) - v0;
            let g = cast::<S>((-(du * du + dv * dv) * inv).exp());
            if g > map[[v, u]] {
                map[[v, u]] = g;
            }
        }
    }
}

/// Renders ground-truth heatmaps for one scene.
///
/// Per level, each in-range instance splats a Gaussian centered on its
/// continuous heatmap position; overlapping instances combine by max, and
/// the cell nearest each center is set to exactly 1 (those cells are the
/// positives of the focal loss). Regression channels are written at the
/// fine-level nearest cell; when two instances share a cell the one with the
/// higher track id wins. Velocity channels are zero: annotations carry no
/// velocity.
pub fn render_targets<S: Scalar>(
    instances: &[Instance<S>],
    grid: &GridSpec<S>,
    params: &GaussianTargetParams,
) -> RenderedTargets<S> {
    let coarse_shape = level_shape(grid, Level::Coarse);
    let regular_shape = level_shape(grid, Level::Regular);
    let fine_shape = level_shape(grid, Level::Fine);
    let mut coarse = Array2::zeros(coarse_shape);
    let mut regular = Array2::zeros(regular_shape);
    let mut fine = Array2::zeros(fine_shape);
    let mut regression = Array3::zeros((REG_CHANNELS, fine_shape.0, fine_shape.1));

    // Stable order: ascending track id, ties by input position, so the
    // "later instance wins" regression rule is deterministic.
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by_key(|&i| instances[i].track_id);

    let mut skipped = 0usize;
    let mut placed: Vec<(usize, [f64; 3])> = Vec::with_capacity(instances.len());
    for &idx in &order {
        let inst = &instances[idx];
        match grid.world_to_heatmap(inst.box3d.center_bev(), 1.0) {
            Ok(_) => {
                let sigma = sigma_regular(inst, grid, params);
                let coords = Level::ALL.map(|level| {
                    let uv = grid
                        .world_to_heatmap(inst.box3d.center_bev(), level.stride())
                        .expect("in range at every stride");
                    [uv[0].to_f64().unwrap(), uv[1].to_f64().unwrap()]
                });
                for (level, map) in [
                    (Level::Coarse, &mut coarse),
                    (Level::Regular, &mut regular),
                    (Level::Fine, &mut fine),
                ] {
                    let li = Level::ALL.iter().position(|l| *l == level).unwrap();
                    let [u0, v0] = coords[li];
                    splat_gaussian(map, u0, v0, sigma_at(level, sigma, params));
                }
                let fi = Level::ALL.iter().position(|l| *l == Level::Fine).unwrap();
                placed.push((idx, [coords[fi][0], coords[fi][1], sigma]));
            }
            Err(_) => skipped += 1,
        }
    }

    // Peak cells become exact positives at every level.
    for &(idx, _) in &placed {
        let inst = &instances[idx];
        for (level, map) in [
            (Level::Coarse, &mut coarse),
            (Level::Regular, &mut regular),
            (Level::Fine, &mut fine),
        ] {
            let uv = grid
                .world_to_heatmap(inst.box3d.center_bev(), level.stride())
                .expect("in range");
            let u = uv[0].to_f64().unwrap() as usize;
            let v = uv[1].to_f64().unwrap() as usize;
            map[[v, u]] = S::one();
        }
    }

    for &(idx, [u0, v0, _]) in &placed {
        let inst = &instances[idx];
        let (iu, iv) = (u0 as usize, v0 as usize);
        let b = &inst.box3d;
        regression[[channel::OFF_U, iv, iu]] = cast(u0 - iu as f64);
        regression[[channel::OFF_V, iv, iu]] = cast(v0 - iv as f64);
        regression[[channel::Z, iv, iu]] = b.z;
        regression[[channel::L, iv, iu]] = b.l;
        regression[[channel::W, iv, iu]] = b.w;
        regression[[channel::H, iv, iu]] = b.h;
        regression[[channel::SIN_YAW, iv, iu]] = b.theta.sin();
        regression[[channel::COS_YAW, iv, iu]] = b.theta.cos();
        regression[[channel::VEL_X, iv, iu]] = S::zero();
        regression[[channel::VEL_Y, iv, iu]] = S::zero();
    }

    let pyramid = HeatmapPyramid {
        grid: grid.clone(),
        coarse,
        regular,
        fine,
        regression,
    };
    RenderedTargets {
        pyramid,
        skipped_out_of_range: skipped,
    }
}

/// Focal loss over a prediction/target score-map pair.
///
/// Cells with target exactly 1 contribute `(1-p)^alpha * ln p`; all other
/// cells contribute `(1-y)^beta * p^alpha * ln(1-p)`. The negated total is
/// normalized by the positive-cell count (at least 1). Predictions are
/// clamped to `[1e-6, 1 - 1e-6]`.
pub fn gaussian_focal_loss<S: Scalar>(
    pred: &Array2<S>,
    target: &Array2<S>,
    params: &GaussianTargetParams,
) -> Result<S, HeatmapError> {
    if pred.dim() != target.dim() {
        return Err(HeatmapError::ShapeMismatch {
            expected: target.dim(),
            got: pred.dim(),
        });
    }
    let eps = cast::<S>(1e-6);
    let one = S::one();
    let alpha = cast::<S>(params.focal_alpha);
    let beta = cast::<S>(params.focal_beta);
    let mut total = S::zero();
    let mut positives = 0usize;
    for (p_raw, y) in pred.iter().zip(target.iter()) {
        let p = (*p_raw).max(eps).min(one - eps);
        if *y == one {
            positives += 1;
            total += (one - p).powf(alpha) * p.ln();
        } else {
            total += (one - *y).powf(beta) * p.powf(alpha) * (one - p).ln();
        }
    }
    Ok(-total / cast(positives.max(1) as f64))
}

/// Cells that are 3x3 local maxima with value above `min_value`.
///
/// Equal-valued plateaus count once: within a plateau only the cell that
/// comes first in raster order qualifies.
pub fn local_max_cells<S: Scalar>(map: &Array2<S>, min_value: S) -> Vec<(usize, usize)> {
    let (h, w) = (map.nrows(), map.ncols());
    let mut peaks = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let val = map[[v, u]];
            let above = val.partial_cmp(&min_value) == Some(std::cmp::Ordering::Greater);
            if !above {
                continue;
            }
            let mut is_peak = true;
            'neigh: for dv in -1i64..=1 {
                for du in -1i64..=1 {
                    if dv == 0 && du == 0 {
                        continue;
                    }
                    let nv = v as i64 + dv;
                    let nu = u as i64 + du;
                    if nv < 0 || nu < 0 || nv >= h as i64 || nu >= w as i64 {
                        continue;
                    }
                    let nval = map[[nv as usize, nu as usize]];
                    let earlier = (nv, nu) < (v as i64, u as i64);
                    let dominated = if earlier { val > nval } else { val >= nval };
                    if !dominated {
                        is_peak = false;
                        break 'neigh;
                    }
                }
            }
            if is_peak {
                peaks.push((v, u));
            }
        }
    }
    peaks
}

/// Number of 3x3 local maxima above `min_value`.
pub fn count_local_maxima<S: Scalar>(map: &Array2<S>, min_value: S) -> usize {
    local_max_cells(map, min_value).len()
}

fn bilinear_sample<S: Scalar>(map: &Array2<S>, u: f64, v: f64) -> S {
    let (h, w) = (map.nrows(), map.ncols());
    let x = u - 0.5;
    let y = v - 0.5;
    let clamp = |val: f64, hi: usize| val.max(0.0).min(hi as f64 - 1.0);
    let x = clamp(x, w);
    let y = clamp(y, h);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = cast::<S>(x - x0 as f64);
    let fy = cast::<S>(y - y0 as f64);
    let one = S::one();
    map[[y0, x0]] * (one - fx) * (one - fy)
        + map[[y0, x1]] * fx * (one - fy)
        + map[[y1, x0]] * (one - fx) * fy
        + map[[y1, x1]] * fx * fy
}

/// Decodes fine-level peaks into detections.
///
/// Candidates are the 3x3 local maxima of the fine score map (value above
/// zero). Each candidate's score is the geometric blend
/// `fine^(1-agg_weight) * coarse^agg_weight` with the coarse value sampled
/// bilinearly at the corresponding position, so coarse context can damp but
/// never create a peak. The top `k_max` candidates strictly above
/// `score_thresh` are decoded from the regression channels at the peak cell;
/// candidates whose regression does not form a valid box are dropped.
pub fn decode_peaks<S: Scalar>(
    pyramid: &HeatmapPyramid<S>,
    k_max: usize,
    score_thresh: S,
    agg_weight: S,
) -> Vec<Detection<S>> {
    assert!(k_max >= 1, "k_max must be at least 1");
    assert!(
        agg_weight >= S::zero() && agg_weight <= S::one(),
        "agg_weight must lie in [0, 1]"
    );
    let fine = &pyramid.fine;
    let coarse = &pyramid.coarse;
    let reg = &pyramid.regression;
    let coarse_per_fine = Level::Fine.stride() / Level::Coarse.stride();

    let mut scored: Vec<((usize, usize), S)> = local_max_cells(fine, S::zero())
        .into_iter()
        .map(|(v, u)| {
            let uc = (u as f64 + 0.5) * coarse_per_fine;
            let vc = (v as f64 + 0.5) * coarse_per_fine;
            let coarse_val = bilinear_sample(coarse, uc, vc);
            let one = S::one();
            let score = fine[[v, u]].powf(one - agg_weight) * coarse_val.powf(agg_weight);
            ((v, u), score)
        })
        .filter(|&(_, score)| score > score_thresh)
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
    scored.truncate(k_max);

    let mut detections = Vec::with_capacity(scored.len());
    for ((v, u), score) in scored {
        let off_u = reg[[channel::OFF_U, v, u]];
        let off_v = reg[[channel::OFF_V, v, u]];
        let uv = [cast::<S>(u as f64) + off_u, cast::<S>(v as f64) + off_v];
        let world = pyramid.grid.heatmap_to_world(uv, Level::Fine.stride());
        let theta = reg[[channel::SIN_YAW, v, u]].atan2(reg[[channel::COS_YAW, v, u]]);
        let boxed = crate::geometry::Box3d::new(
            world[0],
            world[1],
            reg[[channel::Z, v, u]],
            reg[[channel::L, v, u]],
            reg[[channel::W, v, u]],
            reg[[channel::H, v, u]],
            theta,
        );
        if let Ok(box3d) = boxed {
            let det = Detection::new(box3d, score)
                .expect("blend of in-range scores is in range")
                .with_velocity([reg[[channel::VEL_X, v, u]], reg[[channel::VEL_Y, v, u]]])
                .expect("finite regression");
            detections.push(det);
        }
    }
    detections
}
