//! Interchange file formats the CLI reads and writes, plus atomic output
//! helpers. Detections are exchanged as a JSON array per frame of
//! `{box3d, score, velocity}` objects grouped by sequence.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crowdperc::geometry::{Box3d, Detection};

/// Detection predictions for one or more sequences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub sequences: Vec<SequencePredictions>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequencePredictions {
    pub sequence_id: String,
    pub frames: Vec<FramePredictions>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FramePredictions {
    pub frame_index: u32,
    pub detections: Vec<Detection<f64>>,
}

/// Tracking output for one or more sequences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracksFile {
    pub sequences: Vec<SequenceTracks>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceTracks {
    pub sequence_id: String,
    pub frames: Vec<FrameTracks>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameTracks {
    pub frame_index: u32,
    pub tracks: Vec<TrackEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackEntry {
    pub track_id: u64,
    pub box3d: Box3d<f64>,
}

/// Predicted trajectories, matched to ground truth by track id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoriesFile {
    pub trajectories: Vec<TrajectoryEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub sequence_id: String,
    pub track_id: u64,
    /// `[timestamp s, x m, y m]` rows, strictly increasing timestamps.
    pub points: Vec<[f64; 3]>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes a report through a temp file in the target directory, so a failed
/// run never leaves a partial output behind.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing report")?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .context("creating temp output")?;
    std::io::Write::write_all(&mut tmp, bytes).context("writing output")?;
    tmp.persist(path)
        .with_context(|| format!("moving output into {}", path.display()))?;
    Ok(())
}
