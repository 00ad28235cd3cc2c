//! Command line front-end for the zonetrack pipeline.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use zonetrack_core::eval::EvalConfig;
use zonetrack_core::pipeline::{self, PipelineConfig};
use zonetrack_core::{io, synth};

#[derive(Parser)]
#[command(
    name = "zonetrack",
    version,
    about = "Multi-camera vehicle tracking guided by crossroad zones"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world (detections, features, zones, topology,
    /// ground truth, manifest)
    Synth {
        /// Named preset, e.g. stress-v1
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// World configuration as TOML
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the world seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run single-camera tracking and dump tracklets
    Sct {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-camera matching from an existing tracklet dump
    Mtmct {
        #[arg(long)]
        config: PathBuf,
        /// Tracklet dump (defaults to <output_dir>/tracklets.jsonl)
        #[arg(long)]
        tracklets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a submission against ground truth
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// IoU threshold for box correspondence
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Only score ground-truth identities seen in at least two cameras
        #[arg(long)]
        multi_cam_gt_only: bool,
        /// Write the JSON report here as well as to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline: tracking, matching and evaluation
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cumulative ablation: baseline, +TFS, +DBTM, +Rerank, +SCAC
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a pipeline configuration template
    Config,
}

fn load_pipeline_config(path: &PathBuf, out: Option<PathBuf>) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: PipelineConfig =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn print_report(report: &zonetrack_core::eval::MetricReport) {
    println!("{}", serde_json::to_string_pretty(report).expect("report serialization"));
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match cli.command {
        Command::Synth {
            preset,
            config,
            seed,
            out,
        } => {
            let mut world_cfg = match (&preset, &config) {
                (Some(name), _) => synth::preset(name)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading config {}", path.display()))?;
                    toml::from_str(&text)
                        .with_context(|| format!("parsing config {}", path.display()))?
                }
                (None, None) => synth::WorldConfig::default(),
            };
            if let Some(seed) = seed {
                world_cfg.seed = seed;
            }
            let world = synth::generate(&world_cfg)?;
            let paths = synth::write_world(&world, &out, preset.as_deref())?;
            println!(
                "wrote {} detections, {} gt records for {} cameras to {}",
                world.detections.len(),
                world.gt.len(),
                world_cfg.n_cameras,
                out.display()
            );
            println!("  detections: {}", paths.detections.display());
            println!("  features:   {}", paths.features.display());
            println!("  zones:      {}", paths.zones.display());
            println!("  topology:   {}", paths.topology.display());
            println!("  gt:         {}", paths.gt.display());
            println!("  manifest:   {}", paths.manifest.display());
        }
        Command::Sct { config, out } => {
            let cfg = load_pipeline_config(&config, out)?;
            let path = pipeline::run_sct_only(&cfg)?;
            println!("tracklets written to {}", path.display());
        }
        Command::Mtmct {
            config,
            tracklets,
            out,
        } => {
            let cfg = load_pipeline_config(&config, out)?;
            let tracklets_path =
                tracklets.unwrap_or_else(|| cfg.output_dir.join("tracklets.jsonl"));
            let outcome = pipeline::run_mtmct(&cfg, &tracklets_path)?;
            println!(
                "{} tracklets -> {} trajectories, submission at {}",
                outcome.tracklet_count,
                outcome.trajectory_count,
                outcome.submission_path.display()
            );
            if let Some(report) = &outcome.report {
                print_report(report);
            }
        }
        Command::Eval {
            gt,
            pred,
            iou,
            multi_cam_gt_only,
            out,
        } => {
            let gt_records = io::parse_submission(&gt)?;
            let pred_records = io::parse_submission(&pred)?;
            let report = zonetrack_core::eval::evaluate(
                &gt_records,
                &pred_records,
                &EvalConfig {
                    iou_threshold: iou,
                    multi_cam_gt_only,
                },
            )?;
            print_report(&report);
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report).expect("report serialization");
                io::write_atomic(&path, &text)?;
            }
        }
        Command::Pipeline { config, out } => {
            let cfg = load_pipeline_config(&config, out)?;
            let outcome = pipeline::run_pipeline(&cfg)?;
            println!(
                "{} tracklets -> {} trajectories, submission at {}",
                outcome.tracklet_count,
                outcome.trajectory_count,
                outcome.submission_path.display()
            );
            if let Some(report) = &outcome.report {
                print_report(report);
            }
        }
        Command::Ablate { config, out } => {
            let cfg = load_pipeline_config(&config, out)?;
            let rows = pipeline::run_ablation(&cfg)?;
            println!(
                "{:<10} {:>7} {:>7} {:>7} {:>10} {:>7}",
                "method", "IDF1", "IDP", "IDR", "Precision", "Recall"
            );
            for row in &rows {
                println!(
                    "{:<10} {:>7.4} {:>7.4} {:>7.4} {:>10.4} {:>7.4}",
                    row.label,
                    row.metrics.idf1,
                    row.metrics.idp,
                    row.metrics.idr,
                    row.metrics.precision,
                    row.metrics.recall
                );
            }
            println!(
                "ablation report written to {}",
                cfg.output_dir.join("ablation.json").display()
            );
        }
        Command::Config => {
            let cfg = PipelineConfig::new(
                pipeline::InputPaths {
                    detections: "world/detections.txt".into(),
                    features: "world/features.txt".into(),
                    zones: "world/zones.json".into(),
                    topology: "world/topology.json".into(),
                    gt: Some("world/gt.txt".into()),
                },
                "out",
                32,
            );
            print!("{}", toml::to_string_pretty(&cfg).expect("config serialization"));
        }
    }
    Ok(())
}
