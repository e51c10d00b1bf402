//! Synthetic crowded scenes: seeded walker trajectories with group
//! structure, cylinder-proxy LiDAR returns that thin out with distance, and
//! occlusion labels from angular shadowing, all emitted in the on-disk
//! dataset layout.
//!
//! The generator is intentionally simple but honest about the phenomena the
//! rest of the toolkit measures: pedestrians cluster, point counts fall off
//! as 1/d^2, and bodies shadow each other from the sensor's viewpoint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::dataset::{
    pointcloud_ref, sequence_path, write_pointcloud, write_sequence, DatasetError, Point,
    PointCloud, Sequence, SequenceMeta, Splits,
};
use crate::geometry::{Box3d, Frame, Instance, OcclusionLevel};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    ConfigInvalid(String),
}

/// Average pedestrian body: box extents and the matching elliptical
/// cylinder proxy points are sampled on.
pub const BODY_EXTENT: [f64; 3] = [0.57, 0.6, 1.7];
const GROUND_Z: f64 = -2.0;
const BODY_SHADOW_RADIUS: f64 = 0.3;

/// Walkers stay inside this box so every pedestrian keeps at least the
/// 15 annotated points the far corner allows.
const WALK_BOUNDS: [[f64; 2]; 2] = [[1.5, 26.0], [-17.0, 17.0]];

/// Group leaders keep enough margin that members at the widest offset never
/// hit the walk bounds and lose their spacing to clamping.
const LEADER_BOUNDS: [[f64; 2]; 2] = [[3.2, 24.3], [-15.3, 15.3]];

const MAX_MEMBER_OFFSET: f64 = 1.5;

/// Scene generation parameters; the seed fully determines the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Target crowd level 0..=3; picks the per-frame pedestrian count.
    pub crowd_level: u8,
    /// Walkers per group, sampled uniformly from this inclusive range.
    pub group_size_range: [usize; 2],
    /// Walking speed range, m/s.
    pub speed_range: [f64; 2],
    /// Scene duration, seconds.
    pub duration: f64,
    /// Frames per second.
    pub frame_rate: f64,
    /// Sensor position on the ground plane.
    pub sensor_origin: [f64; 2],
    pub seed: u64,
    /// Points given to a pedestrian at distance d are
    /// `min(max_points, round(points_budget / d^2))`.
    pub points_budget: f64,
    pub max_points_per_pedestrian: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            crowd_level: 1,
            group_size_range: [1, 4],
            speed_range: [0.5, 1.5],
            duration: 20.0,
            frame_rate: 2.5,
            sensor_origin: [0.0, 0.0],
            seed: 0,
            points_budget: 16_500.0,
            max_points_per_pedestrian: 400,
        }
    }
}

impl SceneConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.crowd_level > 3 {
            return Err(SynthError::ConfigInvalid(format!(
                "crowd_level {} not in 0..=3",
                self.crowd_level
            )));
        }
        for (name, v) in [("frame_rate", self.frame_rate), ("duration", self.duration)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(SynthError::ConfigInvalid(format!(
                    "{name} must be positive"
                )));
            }
        }
        if self.group_size_range[0] == 0 || self.group_size_range[0] > self.group_size_range[1] {
            return Err(SynthError::ConfigInvalid("bad group size range".into()));
        }
        let speeds_ok = self.speed_range[0].is_finite()
            && self.speed_range[1].is_finite()
            && self.speed_range[0] > 0.0
            && self.speed_range[0] <= self.speed_range[1];
        if !speeds_ok {
            return Err(SynthError::ConfigInvalid("bad speed range".into()));
        }
        if !self.points_budget.is_finite() || self.points_budget <= 0.0 {
            return Err(SynthError::ConfigInvalid(
                "points budget must be positive".into(),
            ));
        }
        Ok(())
    }

    fn walker_count(&self, rng: &mut ChaCha8Rng) -> usize {
        let (lo, hi) = match self.crowd_level {
            0 => (6, 8),
            1 => (12, 18),
            2 => (22, 28),
            _ => (34, 42),
        };
        rng.random_range(lo..=hi)
    }
}

/// A generated sequence plus its per-frame point clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub sequence: Sequence<f64>,
    pub pointclouds: Vec<PointCloud>,
}

struct Walker {
    track_id: u64,
    pos: [f64; 2],
    vel: [f64; 2],
    heading: f64,
    /// Group leader index; leaders point at themselves.
    leader: usize,
    offset: [f64; 2],
}

fn clamp_into_bounds(p: [f64; 2]) -> [f64; 2] {
    [
        p[0].clamp(WALK_BOUNDS[0][0], WALK_BOUNDS[0][1]),
        p[1].clamp(WALK_BOUNDS[1][0], WALK_BOUNDS[1][1]),
    ]
}

fn spawn_walkers(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Walker> {
    let total = cfg.walker_count(rng);
    let mut walkers: Vec<Walker> = Vec::with_capacity(total);
    let mut next_id = 0u64;
    while walkers.len() < total {
        let group = rng
            .random_range(cfg.group_size_range[0]..=cfg.group_size_range[1])
            .min(total - walkers.len());
        let leader_pos = [
            rng.random_range(LEADER_BOUNDS[0][0]..LEADER_BOUNDS[0][1]),
            rng.random_range(LEADER_BOUNDS[1][0]..LEADER_BOUNDS[1][1]),
        ];
        let speed = rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]);
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let vel = [speed * heading.cos(), speed * heading.sin()];
        let leader_index = walkers.len();
        let mut taken_offsets: Vec<[f64; 2]> = vec![[0.0, 0.0]];
        for member in 0..group {
            let offset = if member == 0 {
                [0.0, 0.0]
            } else {
                // Bodies are 0.6 m wide; keep group members from standing
                // inside each other.
                let mut attempt = 0u32;
                loop {
                    let hi = (1.3 + 0.1 * f64::from(attempt)).min(MAX_MEMBER_OFFSET);
                    let r = rng.random_range(0.65..hi);
                    let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let cand = [r * a.cos(), r * a.sin()];
                    let clear = taken_offsets.iter().all(|o| {
                        let dx = cand[0] - o[0];
                        let dy = cand[1] - o[1];
                        (dx * dx + dy * dy).sqrt() >= 0.6
                    });
                    if clear || attempt > 50 {
                        taken_offsets.push(cand);
                        break cand;
                    }
                    attempt += 1;
                }
            };
            walkers.push(Walker {
                track_id: next_id,
                pos: clamp_into_bounds([leader_pos[0] + offset[0], leader_pos[1] + offset[1]]),
                vel,
                heading,
                leader: leader_index,
                offset,
            });
            next_id += 1;
        }
    }
    walkers
}

fn step_walkers(walkers: &mut [Walker], dt: f64, rng: &mut ChaCha8Rng) {
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let jitter = Normal::new(0.0, 0.03).expect("valid sigma");
    // Leaders move with noisy constant velocity and bounce off the bounds.
    for (i, w) in walkers.iter_mut().enumerate() {
        if w.leader != i {
            continue;
        }
        w.vel[0] += noise.sample(rng);
        w.vel[1] += noise.sample(rng);
        for (axis, &[lo, hi]) in LEADER_BOUNDS.iter().enumerate() {
            let mut next = w.pos[axis] + w.vel[axis] * dt;
            if next < lo || next > hi {
                w.vel[axis] = -w.vel[axis];
                next = next.clamp(lo, hi);
            }
            w.pos[axis] = next;
        }
        w.heading = w.vel[1].atan2(w.vel[0]);
    }
    // Members shadow their leader at a jittered offset.
    for i in 0..walkers.len() {
        let li = walkers[i].leader;
        if li == i {
            continue;
        }
        let leader_pos = walkers[li].pos;
        let leader_vel = walkers[li].vel;
        let leader_heading = walkers[li].heading;
        let w = &mut walkers[i];
        w.pos = clamp_into_bounds([
            leader_pos[0] + w.offset[0] + jitter.sample(rng),
            leader_pos[1] + w.offset[1] + jitter.sample(rng),
        ]);
        w.vel = leader_vel;
        w.heading = leader_heading;
    }
}

/// Fraction of each pedestrian's angular extent (seen from `sensor`) that
/// is covered by strictly nearer pedestrians. Intervals never wrap because
/// walkers stay in the x > 0 half plane of the sensor.
pub fn shadow_fractions(centers: &[[f64; 2]], sensor: [f64; 2]) -> Vec<f64> {
    let polar: Vec<(f64, f64, f64)> = centers
        .iter()
        .map(|c| {
            let dx = c[0] - sensor[0];
            let dy = c[1] - sensor[1];
            let d = (dx * dx + dy * dy).sqrt();
            let phi = dy.atan2(dx);
            let half = (BODY_SHADOW_RADIUS / d.max(BODY_SHADOW_RADIUS)).asin();
            (d, phi - half, phi + half)
        })
        .collect();
    polar
        .iter()
        .enumerate()
        .map(|(i, &(d_i, lo, hi))| {
            let width = hi - lo;
            let mut spans: Vec<(f64, f64)> = polar
                .iter()
                .enumerate()
                .filter(|&(j, &(d_j, _, _))| j != i && d_j < d_i)
                .map(|(_, &(_, l, h))| (l.max(lo), h.min(hi)))
                .filter(|&(l, h)| h > l)
                .collect();
            spans.sort_by(|a, b| a.partial_cmp(b).expect("finite angles"));
            let mut covered = 0.0;
            let mut cursor = lo;
            for (l, h) in spans {
                let start = l.max(cursor);
                if h > start {
                    covered += h - start;
                    cursor = h;
                }
            }
            covered / width
        })
        .collect()
}

/// Maps a shadow fraction to an occlusion label: under 10% fully visible,
/// under 50% partially occluded, otherwise heavily occluded.
pub fn occlusion_from_fraction(fraction: f64) -> OcclusionLevel {
    if fraction < 0.1 {
        OcclusionLevel::None
    } else if fraction < 0.5 {
        OcclusionLevel::Partial
    } else {
        OcclusionLevel::Heavy
    }
}

fn point_budget(cfg: &SceneConfig, distance: f64) -> u32 {
    let raw = (cfg.points_budget / (distance * distance)).round();
    (raw as u32).min(cfg.max_points_per_pedestrian)
}

fn sample_body_points(w: &Walker, count: u32, rng: &mut ChaCha8Rng, out: &mut Vec<Point>) {
    let (sin_t, cos_t) = w.heading.sin_cos();
    for _ in 0..count {
        let psi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let inward = rng.random_range(0.85..0.999);
        let lx = BODY_EXTENT[0] / 2.0 * inward * psi.cos();
        let ly = BODY_EXTENT[1] / 2.0 * inward * psi.sin();
        let x = w.pos[0] + lx * cos_t - ly * sin_t;
        let y = w.pos[1] + lx * sin_t + ly * cos_t;
        let z = rng.random_range(GROUND_Z + 0.02..GROUND_Z + BODY_EXTENT[2] - 0.02);
        out.push(Point {
            x: x as f32,
            y: y as f32,
            z: z as f32,
            intensity: rng.random_range(0.0..1.0),
        });
    }
}

/// Generates one sequence. The same config (seed included) is bit-identical
/// across runs. Pedestrians whose point budget falls below 15 are left out
/// of the annotations but still contribute points to the cloud.
pub fn generate_scene(sequence_id: &str, cfg: &SceneConfig) -> Result<GeneratedScene, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut walkers = spawn_walkers(cfg, &mut rng);
    let dt = 1.0 / cfg.frame_rate;
    let frame_count = (cfg.duration * cfg.frame_rate).round().max(1.0) as usize;

    let mut frames = Vec::with_capacity(frame_count);
    let mut pointclouds = Vec::with_capacity(frame_count);
    for frame_index in 0..frame_count {
        if frame_index > 0 {
            step_walkers(&mut walkers, dt, &mut rng);
        }
        let centers: Vec<[f64; 2]> = walkers.iter().map(|w| w.pos).collect();
        let fractions = shadow_fractions(&centers, cfg.sensor_origin);

        let mut cloud = Vec::new();
        let mut instances = Vec::with_capacity(walkers.len());
        for (w, &fraction) in walkers.iter().zip(&fractions) {
            let dx = w.pos[0] - cfg.sensor_origin[0];
            let dy = w.pos[1] - cfg.sensor_origin[1];
            let distance = (dx * dx + dy * dy).sqrt();
            let num_points = point_budget(cfg, distance);
            sample_body_points(w, num_points, &mut rng, &mut cloud);
            if num_points < 15 {
                continue;
            }
            instances.push(Instance {
                track_id: w.track_id,
                box3d: Box3d::new(
                    w.pos[0],
                    w.pos[1],
                    GROUND_Z + BODY_EXTENT[2] / 2.0,
                    BODY_EXTENT[0],
                    BODY_EXTENT[1],
                    BODY_EXTENT[2],
                    w.heading,
                )
                .expect("valid body box"),
                box2d: None,
                occlusion: occlusion_from_fraction(fraction),
                num_points,
            });
        }
        frames.push(Frame {
            frame_index: frame_index as u32,
            timestamp: frame_index as f64 * dt,
            pointcloud_ref: pointcloud_ref(sequence_id, frame_index as u32),
            instances,
        });
        pointclouds.push(PointCloud { points: cloud });
    }

    Ok(GeneratedScene {
        sequence: Sequence {
            sequence_id: sequence_id.to_string(),
            meta: SequenceMeta {
                weather: "clear".into(),
                scene: "synthetic-plaza".into(),
            },
            // Plausible pinhole projection; stored and applied only.
            calibration: Some([
                500.0, 0.0, 640.0, 0.0, //
                0.0, 500.0, 360.0, 0.0, //
                0.0, 0.0, 1.0, 0.0,
            ]),
            frames,
        },
        pointclouds,
    })
}

/// Writes a generated scene into the dataset layout under `root`.
pub fn write_scene(root: &Path, scene: &GeneratedScene) -> Result<(), DatasetError> {
    let id = &scene.sequence.sequence_id;
    write_sequence(&sequence_path(root, id), &scene.sequence)?;
    for (frame, cloud) in scene.sequence.frames.iter().zip(&scene.pointclouds) {
        write_pointcloud(&root.join(&frame.pointcloud_ref), cloud)?;
    }
    Ok(())
}

/// 70/15/15 train/val/test assignment by sequence order.
pub fn split_assignment(ids: &[String]) -> Splits {
    let n = ids.len();
    let train_end = (n * 70).div_euclid(100);
    let val_end = (train_end + (n * 15).div_euclid(100)).min(n);
    let mut splits = Splits::new();
    splits.insert("train".into(), ids[..train_end].to_vec());
    splits.insert("val".into(), ids[train_end..val_end].to_vec());
    splits.insert("test".into(), ids[val_end..].to_vec());
    splits
}

/// Generates `n_sequences` scenes (seeded `seed, seed+1, ...`), writes them
/// under `root`, and splits them 70/15/15 by sequence into train/val/test.
pub fn generate_dataset(
    root: &Path,
    cfg: &SceneConfig,
    n_sequences: usize,
) -> Result<Splits, SynthError> {
    let mut ids = Vec::with_capacity(n_sequences);
    for i in 0..n_sequences {
        let id = format!("seq_{i:03}");
        let mut scene_cfg = cfg.clone();
        scene_cfg.seed = cfg.seed.wrapping_add(i as u64);
        let scene = generate_scene(&id, &scene_cfg)?;
        write_scene(root, &scene)
            .map_err(|e| SynthError::ConfigInvalid(format!("write failed: {e}")))?;
        ids.push(id);
    }
    let splits = split_assignment(&ids);
    crate::dataset::write_splits(root, &splits)
        .map_err(|e| SynthError::ConfigInvalid(format!("write failed: {e}")))?;
    Ok(splits)
}
