//! Perception toolkit for pedestrians in crowded LiDAR scenes: dataset
//! model and statistics, BEV grids, hierarchical Gaussian heatmaps with a
//! spatial-attention kernel, circle NMS, the detection/tracking/prediction
//! metric protocol, and a seeded synthetic scene generator to drive it all.
//!
//! Geometry and the numeric kernels are generic over the scalar type (`f32`
//! or `f64`) through [`scalar::Scalar`]; the aliases below fix the default
//! double-precision types most callers want.

pub mod attention;
pub mod bev;
pub mod config;
pub mod container;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod heatmap;
pub mod postprocess;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use scalar::Scalar;

/// Default-precision aliases for the core domain types.
pub type Box3D = geometry::Box3d<f64>;
pub type Box2D = geometry::Box2d<f64>;
pub type Instance = geometry::Instance<f64>;
pub type Frame = geometry::Frame<f64>;
pub type Detection = geometry::Detection<f64>;
pub type Trajectory = geometry::Trajectory<f64>;
pub type Sequence = dataset::Sequence<f64>;
pub type GridSpec = bev::GridSpec<f64>;
pub type FeatureMap = attention::FeatureMap<f64>;
pub type AttentionWeights = attention::AttentionWeights<f64>;
pub type HeatmapPyramid = heatmap::HeatmapPyramid<f64>;

/// Single-precision aliases, matching the binary container payload type.
pub type FeatureMap32 = attention::FeatureMap<f32>;
pub type AttentionWeights32 = attention::AttentionWeights<f32>;
pub type HeatmapPyramid32 = heatmap::HeatmapPyramid<f32>;
