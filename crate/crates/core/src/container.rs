//! Binary container for attention weights and heatmap pyramids, so score
//! maps produced outside this toolkit can be decoded and evaluated here.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "DHA1"
//! kind    u8       1 = attention weights, 2 = heatmap pyramid
//!
//! kind 1: channels u32, then 3 planes of channels*channels f32 (Wq, Wk, Wv),
//!         row-major.
//! kind 2: grid header: x_min x_max y_min y_max z_min z_max dx dy dz (9 f64),
//!         dims: coarse_h coarse_w regular_h regular_w fine_h fine_w
//!         reg_channels (7 u32),
//!         payload f32: coarse plane, regular plane, fine plane, then each
//!         regression channel plane, all row-major.
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::attention::AttentionWeights;
use crate::bev::GridSpec;
use crate::heatmap::{HeatmapPyramid, REG_CHANNELS};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"DHA1";
const KIND_ATTENTION: u8 = 1;
const KIND_PYRAMID: u8 = 2;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected \"DHA1\"")]
    BadMagic,
    #[error("unexpected container kind {got}, expected {expected}")]
    UnexpectedKind { expected: u8, got: u8 },
    #[error("container truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("invalid grid in header: {0}")]
    BadGrid(#[from] crate::bev::GridError),
    #[error("invalid payload: {0}")]
    BadPayload(#[from] crate::heatmap::HeatmapError),
    #[error("invalid attention weights: {0}")]
    BadWeights(#[from] crate::attention::AttentionError),
    #[error("dims header does not match the grid")]
    DimsMismatch,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.pos + n > self.bytes.len() {
            return Err(ContainerError::Truncated {
                needed: self.pos + n - self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ContainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_plane(&mut self, len: usize) -> Result<Vec<f32>, ContainerError> {
        let raw = self.take(len * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<(), ContainerError> {
        if self.pos != self.bytes.len() {
            return Err(ContainerError::TrailingBytes);
        }
        Ok(())
    }
}

fn push_plane<S: Scalar>(out: &mut Vec<u8>, values: impl Iterator<Item = S>) {
    for v in values {
        out.extend_from_slice(&(v.to_f32().expect("payload fits f32")).to_le_bytes());
    }
}

/// Encodes attention weights; payload is f32 regardless of scalar type.
pub fn encode_attention_weights<S: Scalar>(w: &AttentionWeights<S>) -> Vec<u8> {
    let c = w.channels();
    let mut out = Vec::with_capacity(9 + 3 * c * c * 4);
    out.extend_from_slice(&MAGIC);
    out.push(KIND_ATTENTION);
    out.extend_from_slice(&(c as u32).to_le_bytes());
    for m in [&w.w_q, &w.w_k, &w.w_v] {
        push_plane(&mut out, m.iter().copied());
    }
    out
}

pub fn decode_attention_weights(bytes: &[u8]) -> Result<AttentionWeights<f32>, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let kind = r.u8()?;
    if kind != KIND_ATTENTION {
        return Err(ContainerError::UnexpectedKind {
            expected: KIND_ATTENTION,
            got: kind,
        });
    }
    let c = r.u32()? as usize;
    let mut planes = Vec::with_capacity(3);
    for _ in 0..3 {
        let plane = r.f32_plane(c * c)?;
        planes.push(Array2::from_shape_vec((c, c), plane).unwrap());
    }
    r.finish()?;
    let w_v = planes.pop().unwrap();
    let w_k = planes.pop().unwrap();
    let w_q = planes.pop().unwrap();
    Ok(AttentionWeights::new(w_q, w_k, w_v)?)
}

/// Encodes a heatmap pyramid; payload is f32 regardless of scalar type.
pub fn encode_pyramid<S: Scalar>(p: &HeatmapPyramid<S>) -> Vec<u8> {
    let grid = p.grid();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(KIND_PYRAMID);
    let f = |v: S| v.to_f64().unwrap();
    for v in [
        f(grid.x_range[0]),
        f(grid.x_range[1]),
        f(grid.y_range[0]),
        f(grid.y_range[1]),
        f(grid.z_range[0]),
        f(grid.z_range[1]),
        f(grid.voxel_size[0]),
        f(grid.voxel_size[1]),
        f(grid.voxel_size[2]),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let maps = [
        p.score_map(crate::attention::Level::Coarse),
        p.score_map(crate::attention::Level::Regular),
        p.score_map(crate::attention::Level::Fine),
    ];
    for m in maps {
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    }
    out.extend_from_slice(&(REG_CHANNELS as u32).to_le_bytes());
    for m in maps {
        push_plane(&mut out, m.iter().copied());
    }
    push_plane(&mut out, p.regression().iter().copied());
    out
}

pub fn decode_pyramid(bytes: &[u8]) -> Result<HeatmapPyramid<f32>, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let kind = r.u8()?;
    if kind != KIND_PYRAMID {
        return Err(ContainerError::UnexpectedKind {
            expected: KIND_PYRAMID,
            got: kind,
        });
    }
    let mut g = [0.0f64; 9];
    for v in g.iter_mut() {
        *v = r.f64()?;
    }
    let grid = GridSpec::<f32>::new(
        [g[0] as f32, g[1] as f32],
        [g[2] as f32, g[3] as f32],
        [g[4] as f32, g[5] as f32],
        [g[6] as f32, g[7] as f32, g[8] as f32],
    )?;
    let mut shapes = [(0usize, 0usize); 3];
    for s in shapes.iter_mut() {
        *s = (r.u32()? as usize, r.u32()? as usize);
    }
    let reg_channels = r.u32()? as usize;
    if reg_channels != REG_CHANNELS {
        return Err(ContainerError::DimsMismatch);
    }
    let mut maps = Vec::with_capacity(3);
    for &(h, w) in &shapes {
        let plane = r.f32_plane(h * w)?;
        maps.push(Array2::from_shape_vec((h, w), plane).unwrap());
    }
    let (fh, fw) = shapes[2];
    let reg_plane = r.f32_plane(REG_CHANNELS * fh * fw)?;
    r.finish()?;
    let regression = Array3::from_shape_vec((REG_CHANNELS, fh, fw), reg_plane).unwrap();
    let fine = maps.pop().unwrap();
    let regular = maps.pop().unwrap();
    let coarse = maps.pop().unwrap();
    Ok(HeatmapPyramid::new(
        grid, coarse, regular, fine, regression,
    )?)
}

pub fn write_attention_weights<S: Scalar>(
    path: &Path,
    w: &AttentionWeights<S>,
) -> Result<(), ContainerError> {
    fs::write(path, encode_attention_weights(w)).map_err(|source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_attention_weights(path: &Path) -> Result<AttentionWeights<f32>, ContainerError> {
    let bytes = fs::read(path).map_err(|source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_attention_weights(&bytes)
}

pub fn write_pyramid<S: Scalar>(path: &Path, p: &HeatmapPyramid<S>) -> Result<(), ContainerError> {
    fs::write(path, encode_pyramid(p)).map_err(|source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_pyramid(path: &Path) -> Result<HeatmapPyramid<f32>, ContainerError> {
    let bytes = fs::read(path).map_err(|source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pyramid(&bytes)
}
