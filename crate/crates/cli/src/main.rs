//! `crowdperc` command-line interface.
//!
//! Exit codes: 0 on success, 1 when validation or evaluation fails, 2 on
//! usage errors.

mod commands;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crowdperc::config::RunConfig;
use crowdperc::geometry::DistanceMode;

#[derive(Parser)]
#[command(
    name = "crowdperc",
    about = "Crowd-scene pedestrian perception toolkit",
    version
)]
struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for randomized subcommands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (falls back to CROWDPERC_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the configured center-distance mode.
    #[arg(long, global = true, value_enum)]
    distance_mode: Option<DistanceModeArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceModeArg {
    /// Full 3D Euclidean center distance.
    #[value(name = "3d")]
    Euclid3d,
    /// Ground-plane distance.
    #[value(name = "bev")]
    Bev,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset for schema violations, broken references, and soft
    /// rule breaches. Exits 1 when errors are found.
    Validate {
        /// Dataset root directory.
        root: PathBuf,
        /// Write the full report here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset statistics: density profile, crowd levels, occlusion
    /// histogram, point count vs distance.
    Stats {
        /// Dataset root directory.
        root: PathBuf,
        /// Restrict to one split from splits.json.
        #[arg(long)]
        split: Option<String>,
        /// Distance bin width in meters for the point-count histogram.
        #[arg(long, default_value_t = 5.0)]
        bin_width: f64,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// Also write CSV histograms into this directory.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    GenSynth {
        /// Crowd level 0..=3.
        #[arg(long)]
        level: u8,
        /// Number of sequences.
        #[arg(long, default_value_t = 1)]
        sequences: usize,
        /// Sequence duration, seconds.
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
        /// Annotation frequency, Hz.
        #[arg(long, default_value_t = 2.5)]
        frame_rate: f64,
        /// Output dataset root.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render ground-truth heatmap targets for one frame into a container.
    RenderTargets {
        /// Dataset root directory.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        sequence: String,
        #[arg(long)]
        frame: u32,
        /// Output container path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a heatmap container into detections.
    Decode {
        /// Heatmap container path.
        #[arg(long)]
        heatmaps: PathBuf,
        /// Sequence id recorded in the output file.
        #[arg(long, default_value = "unknown")]
        sequence_id: String,
        /// Frame index recorded in the output file.
        #[arg(long, default_value_t = 0)]
        frame_index: u32,
        /// Output predictions path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Circle NMS and the minimum-point filter over a predictions file.
    Nms {
        /// Predictions file.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset root, needed to resolve point clouds for the
        /// minimum-point filter.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output predictions path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Detection metrics: AP per distance threshold, mAP, occlusion AR.
    EvalDet {
        /// Ground-truth dataset root.
        #[arg(long)]
        gt: PathBuf,
        /// Predictions file.
        #[arg(long)]
        pred: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tracking metrics: MOTA, MT, ML. Takes either finished tracks or raw
    /// detections (which are run through the velocity tracker).
    EvalTrack {
        /// Ground-truth dataset root.
        #[arg(long)]
        gt: PathBuf,
        /// Tracks file.
        #[arg(long)]
        tracks: Option<PathBuf>,
        /// Detections file; the baseline tracker associates them.
        #[arg(long)]
        dets: Option<PathBuf>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prediction metrics: FDE and MDE against ground-truth trajectories.
    EvalPred {
        /// Ground-truth dataset root.
        #[arg(long)]
        gt: PathBuf,
        /// Trajectories file.
        #[arg(long)]
        pred: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(mode) = cli.distance_mode {
        config.eval.distance_mode = match mode {
            DistanceModeArg::Euclid3d => DistanceMode::Euclid3d,
            DistanceModeArg::Bev => DistanceMode::Bev2d,
        };
    }
    Ok(config)
}

fn thread_count(cli: &Cli) -> Option<usize> {
    cli.threads.or_else(|| {
        std::env::var("CROWDPERC_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = thread_count(&cli) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Validate { root, out } => commands::validate(root, out.as_deref()),
        Command::Stats {
            root,
            split,
            bin_width,
            out,
            csv,
        } => commands::stats(
            root,
            split.as_deref(),
            *bin_width,
            out,
            csv.as_deref(),
            &config,
        ),
        Command::GenSynth {
            level,
            sequences,
            duration,
            frame_rate,
            out,
        } => commands::gen_synth(*level, cli.seed, *sequences, *duration, *frame_rate, out),
        Command::RenderTargets {
            dataset,
            sequence,
            frame,
            out,
        } => commands::render_targets_cmd(dataset, sequence, *frame, out, &config),
        Command::Decode {
            heatmaps,
            sequence_id,
            frame_index,
            out,
        } => commands::decode(heatmaps, sequence_id, *frame_index, out, &config),
        Command::Nms { pred, dataset, out } => {
            commands::nms(pred, dataset.as_deref(), out, &config)
        }
        Command::EvalDet { gt, pred, out } => commands::eval_det(gt, pred, out.as_deref(), &config),
        Command::EvalTrack {
            gt,
            tracks,
            dets,
            out,
        } => commands::eval_track(
            gt,
            tracks.as_deref(),
            dets.as_deref(),
            out.as_deref(),
            &config,
        ),
        Command::EvalPred { gt, pred, out } => {
            commands::eval_pred(gt, pred, out.as_deref(), &config)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
