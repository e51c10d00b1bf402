//! Implementations of the CLI subcommands. Everyevaluation report embeds
//! the resolved run configuration, and outputs are written atomically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use crowdperc::bev::GridSpec;
use crowdperc::config::{ProtocolInfo, RunConfig};
use crowdperc::container;
use crowdperc::dataset::{
    self, load_pointcloud, load_sequence, load_splits, validate_dataset, ValidateOptions,
};
use crowdperc::eval::{
    self, average_precision, average_recall_occlusion, clear_mot, fde, greedy_velocity_tracker,
    mde, ApEntry, ArEntry, DetectionMetrics, EvalReport, PredictionMetrics, TrackDisplacement,
    TrackedBox, TrackingMetrics,
};
use crowdperc::geometry::{Box3d, Detection, Instance, OcclusionLevel, Trajectory};
use crowdperc::heatmap::{decode_peaks, render_targets};
use crowdperc::postprocess::{circle_nms, count_points_in_box};
use crowdperc::stats::{
    crowd_level_histogram, density_profile, occlusion_histogram, points_vs_distance, DistanceBin,
};
use crowdperc::synth::{generate_scene, split_assignment, write_scene, SceneConfig};

use crate::formats::{
    read_json, write_atomic, write_json_atomic, FramePredictions, FrameTracks, PredictionsFile,
    SequencePredictions, TracksFile, TrajectoriesFile,
};

pub fn validate(root: &Path, out: Option<&Path>) -> Result<u8> {
    let report = validate_dataset(root, &ValidateOptions::default())
        .with_context(|| format!("validating {}", root.display()))?;
    if let Some(out) = out {
        write_json_atomic(out, &report)?;
    }
    println!(
        "validate: {} error(s), {} warning(s)",
        report.errors.len(),
        report.warnings.len()
    );
    for issue in report.errors.iter().chain(&report.warnings).take(20) {
        eprintln!("  {}: {}", issue.location, issue.message);
    }
    Ok(if report.is_clean() { 0 } else { 1 })
}

/// Loads every sequence under the root, optionally restricted to a split.
fn load_gt_sequences(root: &Path, split: Option<&str>) -> Result<Vec<dataset::Sequence<f64>>> {
    let wanted: Option<Vec<String>> = match split {
        Some(name) => {
            let splits = load_splits(root).context("reading splits.json")?;
            Some(
                splits
                    .get(name)
                    .with_context(|| format!("split `{name}` not found"))?
                    .clone(),
            )
        }
        None => None,
    };
    let dir = root.join("sequences");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut sequences = Vec::new();
    for path in paths {
        let seq: dataset::Sequence<f64> = load_sequence(&path)?;
        if wanted
            .as_ref()
            .is_none_or(|ids| ids.contains(&seq.sequence_id))
        {
            sequences.push(seq);
        }
    }
    Ok(sequences)
}

#[derive(Serialize)]
struct StatsReport {
    sequences: usize,
    frames: usize,
    instances: usize,
    density: crowdperc::stats::DensityProfile,
    crowd_level_frames: [usize; 4],
    occlusion_instances: [usize; 3],
    points_vs_distance: Vec<DistanceBin>,
    bin_width: f64,
    config: RunConfig,
}

pub fn stats(
    root: &Path,
    split: Option<&str>,
    bin_width: f64,
    out: &Path,
    csv_dir: Option<&Path>,
    config: &RunConfig,
) -> Result<u8> {
    let sequences = load_gt_sequences(root, split)?;
    let frames: Vec<crowdperc::Frame> = sequences
        .iter()
        .flat_map(|s| s.frames.iter().cloned())
        .collect();
    let report = StatsReport {
        sequences: sequences.len(),
        frames: frames.len(),
        instances: frames.iter().map(|f| f.instances.len()).sum(),
        density: density_profile(&frames, config.scan_diameter),
        crowd_level_frames: crowd_level_histogram(&frames),
        occlusion_instances: occlusion_histogram(&frames),
        points_vs_distance: points_vs_distance(&frames, bin_width),
        bin_width,
        config: config.clone(),
    };
    write_json_atomic(out, &report)?;
    if let Some(dir) = csv_dir {
        let mut csv = String::from("bin_index,lower_m,upper_m,instance_count,mean_points\n");
        for b in &report.points_vs_distance {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                b.bin_index,
                b.bin_index as f64 * bin_width,
                (b.bin_index + 1) as f64 * bin_width,
                b.instance_count,
                b.mean_points
            ));
        }
        write_atomic(&dir.join("points_vs_distance.csv"), csv.as_bytes())?;
        let mut csv = String::from("crowd_level,frames\n");
        for (level, count) in report.crowd_level_frames.iter().enumerate() {
            csv.push_str(&format!("{level},{count}\n"));
        }
        write_atomic(&dir.join("crowd_levels.csv"), csv.as_bytes())?;
        let mut csv = String::from("occlusion_level,instances\n");
        for (level, count) in report.occlusion_instances.iter().enumerate() {
            csv.push_str(&format!("{level},{count}\n"));
        }
        write_atomic(&dir.join("occlusion.csv"), csv.as_bytes())?;
    }
    println!(
        "stats: {} sequences, {} frames, {} instances, density_5 {:.3}",
        report.sequences, report.frames, report.instances, report.density.density_5
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
pub fn gen_synth(
    level: u8,
    seed: u64,
    sequences: usize,
    duration: f64,
    frame_rate: f64,
    out: &Path,
) -> Result<u8> {
    let base = SceneConfig {
        crowd_level: level,
        duration,
        frame_rate,
        seed,
        ..SceneConfig::default()
    };
    let scenes: Vec<_> = (0..sequences)
        .into_par_iter()
        .map(|i| {
            let cfg = SceneConfig {
                seed: seed.wrapping_add(i as u64),
                ..base.clone()
            };
            generate_scene(&format!("seq_{i:03}"), &cfg)
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .context("generating scenes")?;
    let mut ids = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        write_scene(out, scene).context("writing scene")?;
        ids.push(scene.sequence.sequence_id.clone());
    }
    dataset::write_splits(out, &split_assignment(&ids)).context("writing splits")?;
    let frames: usize = scenes.iter().map(|s| s.sequence.frames.len()).sum();
    println!(
        "gen-synth: wrote {} sequence(s), {frames} frames to {}",
        scenes.len(),
        out.display()
    );
    Ok(0)
}

fn grid_to_f32(g: &GridSpec<f64>) -> Result<GridSpec<f32>> {
    let f = |v: f64| v as f32;
    GridSpec::new(
        g.x_range.map(f),
        g.y_range.map(f),
        g.z_range.map(f),
        g.voxel_size.map(f),
    )
    .context("grid does not survive single precision")
}

fn instance_to_f32(i: &Instance<f64>) -> Instance<f32> {
    let b = &i.box3d;
    Instance {
        track_id: i.track_id,
        box3d: Box3d::new(
            b.x as f32,
            b.y as f32,
            b.z as f32,
            b.l as f32,
            b.w as f32,
            b.h as f32,
            b.theta as f32,
        )
        .expect("valid box survives cast"),
        box2d: None,
        occlusion: i.occlusion,
        num_points: i.num_points,
    }
}

pub fn render_targets_cmd(
    root: &Path,
    sequence_id: &str,
    frame_index: u32,
    out: &Path,
    config: &RunConfig,
) -> Result<u8> {
    let seq: dataset::Sequence<f64> = load_sequence(&dataset::sequence_path(root, sequence_id))?;
    let frame = seq
        .frames
        .iter()
        .find(|f| f.frame_index == frame_index)
        .with_context(|| format!("frame {frame_index} not in sequence {sequence_id}"))?;
    let grid = grid_to_f32(&config.grid)?;
    let instances: Vec<Instance<f32>> = frame.instances.iter().map(instance_to_f32).collect();
    let rendered = render_targets(&instances, &grid, &config.targets);
    if rendered.skipped_out_of_range > 0 {
        eprintln!(
            "render-targets: {} instance(s) outside the grid were skipped",
            rendered.skipped_out_of_range
        );
    }
    container::write_pyramid(out, &rendered.pyramid).context("writing container")?;
    println!(
        "render-targets: {} instance(s) rendered to {}",
        instances.len() - rendered.skipped_out_of_range,
        out.display()
    );
    Ok(0)
}

fn detection_to_f64(d: &Detection<f32>) -> Detection<f64> {
    let b = &d.box3d;
    let mut out = Detection::new(
        Box3d::new(
            b.x as f64,
            b.y as f64,
            b.z as f64,
            b.l as f64,
            b.w as f64,
            b.h as f64,
            b.theta as f64,
        )
        .expect("valid box survives cast"),
        d.score as f64,
    )
    .expect("score survives cast");
    if let Some([vx, vy]) = d.velocity {
        out = out
            .with_velocity([vx as f64, vy as f64])
            .expect("finite velocity");
    }
    out
}

pub fn decode(
    heatmaps: &Path,
    sequence_id: &str,
    frame_index: u32,
    out: &Path,
    config: &RunConfig,
) -> Result<u8> {
    let pyramid = container::read_pyramid(heatmaps).context("reading container")?;
    let dets = decode_peaks(
        &pyramid,
        config.decode.k_max,
        config.decode.score_thresh as f32,
        config.decode.agg_weight as f32,
    );
    let file = PredictionsFile {
        sequences: vec![SequencePredictions {
            sequence_id: sequence_id.to_string(),
            frames: vec![FramePredictions {
                frame_index,
                detections: dets.iter().map(detection_to_f64).collect(),
            }],
        }],
    };
    write_json_atomic(out, &file)?;
    println!(
        "decode: {} detection(s) written to {}",
        dets.len(),
        out.display()
    );
    Ok(0)
}

pub fn nms(pred: &Path, dataset_root: Option<&Path>, out: &Path, config: &RunConfig) -> Result<u8> {
    let mut file: PredictionsFile = read_json(pred)?;
    let radius = config.nms.radius;
    let min_points = config.nms.min_points;
    if min_points > 0 && dataset_root.is_none() {
        bail!("the minimum-point filter needs --dataset to locate point clouds (or set nms.min_points to 0)");
    }
    let mut kept_total = 0usize;
    let mut input_total = 0usize;
    for seq in &mut file.sequences {
        for frame in &mut seq.frames {
            input_total += frame.detections.len();
            let mut dets = circle_nms(&frame.detections, radius);
            if min_points > 0 {
                let root = dataset_root.expect("checked above");
                let pc_path =
                    root.join(dataset::pointcloud_ref(&seq.sequence_id, frame.frame_index));
                let pc = load_pointcloud(&pc_path)
                    .with_context(|| format!("loading {}", pc_path.display()))?;
                dets.retain(|d| count_points_in_box(&pc, &d.box3d) >= min_points as usize);
            }
            kept_total += dets.len();
            frame.detections = dets;
        }
    }
    write_json_atomic(out, &file)?;
    println!("nms: kept {kept_total} of {input_total} detection(s)");
    Ok(0)
}

/// Aligns predictions with ground truth frames; every ground-truth frame of
/// a predicted sequence must be covered exactly once.
fn align_frames<'a, T>(
    seq: &'a dataset::Sequence<f64>,
    entries: &'a [T],
    index_of: impl Fn(&T) -> u32,
) -> Result<Vec<&'a T>> {
    if entries.len() != seq.frames.len() {
        bail!(
            "sequence {}: {} predicted frame(s) for {} ground-truth frame(s)",
            seq.sequence_id,
            entries.len(),
            seq.frames.len()
        );
    }
    let by_index: BTreeMap<u32, &T> = entries.iter().map(|e| (index_of(e), e)).collect();
    seq.frames
        .iter()
        .map(|f| {
            by_index.get(&f.frame_index).copied().with_context(|| {
                format!(
                    "sequence {}: missing predictions for frame {}",
                    seq.sequence_id, f.frame_index
                )
            })
        })
        .collect()
}

pub fn eval_det(root: &Path, pred: &Path, out: Option<&Path>, config: &RunConfig) -> Result<u8> {
    let file: PredictionsFile = read_json(pred)?;
    let mode = config.eval.distance_mode;
    let mut gt_frames: Vec<Vec<Instance<f64>>> = Vec::new();
    let mut det_frames: Vec<Vec<Detection<f64>>> = Vec::new();
    for seq_pred in &file.sequences {
        let seq: dataset::Sequence<f64> =
            load_sequence(&dataset::sequence_path(root, &seq_pred.sequence_id))?;
        let aligned = align_frames(&seq, &seq_pred.frames, |f| f.frame_index)?;
        for (frame, pred_frame) in seq.frames.iter().zip(aligned) {
            gt_frames.push(frame.instances.clone());
            det_frames.push(pred_frame.detections.clone());
        }
    }

    let thresholds = &config.eval.distance_thresholds;
    let mut ap = Vec::new();
    for &t in thresholds {
        ap.push(ApEntry {
            threshold: t,
            ap: average_precision(&gt_frames, &det_frames, t, mode)?,
        });
    }
    let map = ap.iter().map(|e| e.ap).sum::<f64>() / ap.len() as f64;
    let mut ar = Vec::new();
    for level in OcclusionLevel::ALL {
        if let Some(r) = average_recall_occlusion(&gt_frames, &det_frames, level, thresholds, mode)?
        {
            ar.push(ArEntry {
                occlusion_level: u8::from(level),
                ar: r,
            });
        }
    }
    let report = EvalReport {
        detection: Some(DetectionMetrics {
            ap: ap.clone(),
            map,
            ar_occlusion: ar,
        }),
        tracking: None,
        prediction: None,
        protocol: ProtocolInfo::new(config.clone()),
    };
    if let Some(out) = out {
        write_json_atomic(out, &report)?;
    }
    println!(
        "eval-det: mAP {:.4} ({})",
        map,
        ap.iter()
            .map(|e| format!("AP@{} {:.4}", e.threshold, e.ap))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(0)
}

/// Track ids from different sequences must not collide when pooled.
const SEQUENCE_ID_STRIDE: u64 = 1 << 32;

pub fn eval_track(
    root: &Path,
    tracks_path: Option<&Path>,
    dets_path: Option<&Path>,
    out: Option<&Path>,
    config: &RunConfig,
) -> Result<u8> {
    let mode = config.eval.distance_mode;
    let threshold = config.eval.tracking_threshold;
    let mut gt_frames: Vec<Vec<TrackedBox<f64>>> = Vec::new();
    let mut pred_frames: Vec<Vec<TrackedBox<f64>>> = Vec::new();

    match (tracks_path, dets_path) {
        (Some(path), None) => {
            let file: TracksFile = read_json(path)?;
            for (si, seq_tracks) in file.sequences.iter().enumerate() {
                let seq: dataset::Sequence<f64> =
                    load_sequence(&dataset::sequence_path(root, &seq_tracks.sequence_id))?;
                let aligned: Vec<&FrameTracks> =
                    align_frames(&seq, &seq_tracks.frames, |f| f.frame_index)?;
                let offset = si as u64 * SEQUENCE_ID_STRIDE;
                for (frame, pred) in seq.frames.iter().zip(aligned) {
                    gt_frames.push(
                        frame
                            .instances
                            .iter()
                            .map(|i| (offset + i.track_id, i.box3d))
                            .collect(),
                    );
                    pred_frames.push(
                        pred.tracks
                            .iter()
                            .map(|t| (offset + t.track_id, t.box3d))
                            .collect(),
                    );
                }
            }
        }
        (None, Some(path)) => {
            let file: PredictionsFile = read_json(path)?;
            for (si, seq_pred) in file.sequences.iter().enumerate() {
                let seq: dataset::Sequence<f64> =
                    load_sequence(&dataset::sequence_path(root, &seq_pred.sequence_id))?;
                let aligned = align_frames(&seq, &seq_pred.frames, |f| f.frame_index)?;
                let det_frames: Vec<(f64, Vec<Detection<f64>>)> = seq
                    .frames
                    .iter()
                    .zip(&aligned)
                    .map(|(f, p)| (f.timestamp, p.detections.clone()))
                    .collect();
                let tracked = greedy_velocity_tracker(&det_frames, threshold);
                let offset = si as u64 * SEQUENCE_ID_STRIDE;
                for (frame, pred) in seq.frames.iter().zip(tracked) {
                    gt_frames.push(
                        frame
                            .instances
                            .iter()
                            .map(|i| (offset + i.track_id, i.box3d))
                            .collect(),
                    );
                    pred_frames.push(pred.into_iter().map(|(id, b)| (offset + id, b)).collect());
                }
            }
        }
        _ => bail!("exactly one of --tracks or --dets must be given"),
    }

    let r = clear_mot(&gt_frames, &pred_frames, threshold, mode)?;
    let report = EvalReport {
        detection: None,
        tracking: Some(TrackingMetrics {
            mota: r.mota,
            fp: r.fp,
            false_negatives: r.false_negatives,
            ids: r.ids,
            gt_count: r.gt_count,
            mt: r.mt,
            ml: r.ml,
        }),
        prediction: None,
        protocol: ProtocolInfo::new(config.clone()),
    };
    if let Some(out) = out {
        write_json_atomic(out, &report)?;
    }
    println!(
        "eval-track: MOTA {:.4} (fp {} fn {} ids {} gt {}), MT {:.3} ML {:.3}",
        r.mota, r.fp, r.false_negatives, r.ids, r.gt_count, r.mt, r.ml
    );
    Ok(0)
}

pub fn eval_pred(root: &Path, pred: &Path, out: Option<&Path>, config: &RunConfig) -> Result<u8> {
    let file: TrajectoriesFile = read_json(pred)?;
    let mut gt_cache: BTreeMap<String, Vec<Trajectory<f64>>> = BTreeMap::new();
    let mut per_track = Vec::new();
    for entry in &file.trajectories {
        let gt_trajs = match gt_cache.entry(entry.sequence_id.clone()) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(v) => {
                let seq: dataset::Sequence<f64> =
                    load_sequence(&dataset::sequence_path(root, &entry.sequence_id))?;
                v.insert(eval::gt_trajectories(&seq.frames))
            }
        };
        let gt = gt_trajs
            .iter()
            .find(|t| t.track_id == entry.track_id)
            .with_context(|| {
                format!(
                    "track {} not in sequence {}",
                    entry.track_id, entry.sequence_id
                )
            })?;
        // Ground truth trimmed to the predicted timestamps.
        let gt_points: Vec<(f64, [f64; 2])> = entry
            .points
            .iter()
            .map(|p| {
                gt.points
                    .iter()
                    .find(|(t, _)| (t - p[0]).abs() <= 1e-6)
                    .copied()
                    .with_context(|| {
                        format!("track {}: no ground truth at t={}", entry.track_id, p[0])
                    })
            })
            .collect::<Result<_>>()?;
        let gt_traj = Trajectory::new(entry.track_id, gt_points)
            .context("building aligned ground-truth trajectory")?;
        let pred_traj = Trajectory::new(
            entry.track_id,
            entry.points.iter().map(|p| (p[0], [p[1], p[2]])).collect(),
        )
        .context("building predicted trajectory")?;
        per_track.push(TrackDisplacement {
            track_id: entry.track_id,
            fde: fde(&pred_traj, &gt_traj)?,
            mde: mde(&pred_traj, &gt_traj)?,
        });
    }
    if per_track.is_empty() {
        bail!("prediction file contains no trajectories");
    }
    let mean_fde = per_track.iter().map(|t| t.fde).sum::<f64>() / per_track.len() as f64;
    let mean_mde = per_track.iter().map(|t| t.mde).sum::<f64>() / per_track.len() as f64;
    let report = EvalReport {
        detection: None,
        tracking: None,
        prediction: Some(PredictionMetrics {
            mean_fde,
            mean_mde,
            per_track,
        }),
        protocol: ProtocolInfo::new(config.clone()),
    };
    if let Some(out) = out {
        write_json_atomic(out, &report)?;
    }
    println!("eval-pred: FDE {mean_fde:.4} MDE {mean_mde:.4}");
    Ok(0)
}
