//! Run configuration shared by the CLI and serialized into every report,
//! so no number is ever ambiguous about the parameters that produced it.

use serde::{Deserialize, Serialize};

use crate::bev::{default_grid, GridSpec};
use crate::geometry::DistanceMode;
use crate::heatmap::GaussianTargetParams;
use crate::postprocess::NmsConfig;

/// Peak decoding parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub k_max: usize,
    pub score_thresh: f64,
    /// Geometric blend weight of the coarse map at decode time; 0 uses the
    /// fine map alone.
    pub agg_weight: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            k_max: 500,
            score_thresh: 0.1,
            agg_weight: 0.3,
        }
    }
}

/// Evaluation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    /// Center-distance thresholds for AP/AR, meters.
    pub distance_thresholds: Vec<f64>,
    /// Association gate for tracking metrics, meters.
    pub tracking_threshold: f64,
    pub distance_mode: DistanceMode,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            distance_thresholds: crate::eval::DEFAULT_DISTANCE_THRESHOLDS.to_vec(),
            tracking_threshold: 0.5,
            distance_mode: DistanceMode::Euclid3d,
        }
    }
}

/// Full resolved configuration of a toolkit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_grid")]
    pub grid: GridSpec<f64>,
    #[serde(default)]
    pub nms: NmsConfig,
    #[serde(default)]
    pub targets: GaussianTargetParams,
    #[serde(default)]
    pub decode: DecodeParams,
    #[serde(default)]
    pub eval: EvalParams,
    /// LiDAR scan diameter used by the person-per-range statistic, meters.
    #[serde(default = "default_scan_diameter")]
    pub scan_diameter: f64,
}

fn default_scan_diameter() -> f64 {
    50.0
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            nms: NmsConfig::default(),
            targets: GaussianTargetParams::default(),
            decode: DecodeParams::default(),
            eval: EvalParams::default(),
            scan_diameter: default_scan_diameter(),
        }
    }
}

/// Protocol block embedded in every report: names the matching and
/// integration rules and carries the resolved configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolInfo {
    /// Detection matching rule identifier.
    pub matching: String,
    /// AP integration rule identifier.
    pub ap_integration: String,
    /// Tracking association rule identifier.
    pub tracking: String,
    pub config: RunConfig,
}

impl ProtocolInfo {
    pub fn new(config: RunConfig) -> Self {
        Self {
            matching: "greedy-score-desc-nearest-unmatched-gt".into(),
            ap_integration: "101-point-right-max-interpolation".into(),
            tracking: "clear-mot-reconfirm-then-hungarian".into(),
            config,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pin_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.grid.dims(), (256, 256, 25));
        assert_eq!(c.nms.radius, 0.3);
        assert_eq!(c.nms.min_points, 5);
        assert_eq!(c.decode.k_max, 500);
        assert_eq!(c.decode.score_thresh, 0.1);
        assert_eq!(c.decode.agg_weight, 0.3);
        assert_eq!(c.eval.distance_thresholds, vec![0.25, 0.5, 1.0]);
        assert_eq!(c.eval.tracking_threshold, 0.5);
        assert_eq!(c.eval.distance_mode, DistanceMode::Euclid3d);
    }

    #[test]
    fn partial_config_files_fill_in_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{ "scan_diameter": 80.0 }"#).unwrap();
        assert_eq!(c.scan_diameter, 80.0);
        assert_eq!(c.grid.dims(), (256, 256, 25));
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
