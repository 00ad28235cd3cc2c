//! Stage orchestration: ingest -> single-camera tracking -> zones -> affinity
//! -> clustering -> evaluation, plus the cumulative ablation harness.
//!
//! Ablation flags replace a stage with its identity: no tracklet filtering,
//! an all-ones mask, the raw cosine similarity matrix, or one global
//! clustering round instead of the two-phase sub-clustering.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affinity::{self, RerankParams, SimilarityMatrix};
use crate::eval::{self, EvalConfig, MetricReport};
use crate::io;
use crate::scac::{self, MatchGraph, MergeRecord};
use crate::sct::{self, TrackerConfig};
use crate::types::{CameraTopology, Detection, GlobalTrajectory, TrackRecord, Tracklet, ZoneMap};
use crate::zones::{self, DbtmMatrix};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputPaths {
    pub detections: PathBuf,
    pub features: PathBuf,
    pub zones: PathBuf,
    pub topology: PathBuf,
    #[serde(default)]
    pub gt: Option<PathBuf>,
}

/// Stage toggles mirroring the ablation rows; everything on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub tfs: bool,
    pub dbtm: bool,
    pub rerank: bool,
    pub scac: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            tfs: true,
            dbtm: true,
            rerank: true,
            scac: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityConfig {
    pub rerank_k1: usize,
    pub rerank_k2: usize,
    pub rerank_lambda: Scalar,
    /// Neighbours used by the feature neighbour-update step.
    pub neighbor_k: usize,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        AffinityConfig {
            rerank_k1: 20,
            rerank_k2: 6,
            rerank_lambda: 0.3,
            neighbor_k: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub inter_zone_threshold: Scalar,
    pub inter_cam_threshold: Scalar,
    /// Threshold of the single global round used when sub-clustering is off.
    pub global_threshold: Scalar,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            inter_zone_threshold: 0.2,
            inter_cam_threshold: 0.2,
            global_threshold: 0.2,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub output_dir: PathBuf,
    pub feature_dim: usize,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub affinity: AffinityConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablation: AblationFlags,
    /// Emit single-camera clusters too, not only cross-camera trajectories.
    #[serde(default)]
    pub include_single_camera: bool,
    /// Cache the tracking stage keyed by the input content hash.
    #[serde(default = "default_true")]
    pub cache: bool,
    /// Dump similarity matrices and the mask as CSV for debugging.
    #[serde(default)]
    pub debug_dumps: bool,
}

impl PipelineConfig {
    pub fn new(inputs: InputPaths, output_dir: impl Into<PathBuf>, feature_dim: usize) -> Self {
        PipelineConfig {
            inputs,
            output_dir: output_dir.into(),
            feature_dim,
            tracker: TrackerConfig::default(),
            affinity: AffinityConfig::default(),
            clustering: ClusteringConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationFlags::default(),
            include_single_camera: false,
            cache: true,
            debug_dumps: false,
        }
    }

    /// Configuration for a directory produced by the synthetic generator:
    /// reads the manifest for the embedding dimension and wires up the
    /// standard file names including ground truth.
    pub fn from_world_dir(world_dir: impl AsRef<Path>, output_dir: impl Into<PathBuf>) -> Result<Self> {
        let world_dir = world_dir.as_ref();
        let manifest_path = world_dir.join("manifest.json");
        let text = io::read_to_string(&manifest_path)?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
        let dim = value
            .pointer("/config/embedding_dim")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| {
                Error::Format(format!(
                    "{}: missing config.embedding_dim",
                    manifest_path.display()
                ))
            })? as usize;
        let inputs = InputPaths {
            detections: world_dir.join("detections.txt"),
            features: world_dir.join("features.txt"),
            zones: world_dir.join("zones.json"),
            topology: world_dir.join("topology.json"),
            gt: Some(world_dir.join("gt.txt")).filter(|p| p.exists()),
        };
        Ok(PipelineConfig::new(inputs, output_dir, dim))
    }
}

/// Everything read from disk before any stage runs.
pub struct Ingested {
    pub detections: Vec<Detection>,
    pub features: Vec<Vec<Scalar>>,
    pub zone_map: ZoneMap,
    pub topology: CameraTopology,
    pub gt: Option<Vec<TrackRecord>>,
}

pub fn ingest(cfg: &PipelineConfig) -> Result<Ingested> {
    let stage = Error::in_stage("ingest");
    (|| -> Result<Ingested> {
        let parsed =
            io::parse_detections(&cfg.inputs.detections, &cfg.inputs.features, cfg.feature_dim)?;
        if !parsed.rejected_rows.is_empty() {
            log::warn!(
                "rejected {} detection rows with degenerate boxes: {:?}",
                parsed.rejected_rows.len(),
                parsed.rejected_rows
            );
        }
        let features = io::load_features(&cfg.inputs.features, cfg.feature_dim)?;
        let zone_map = io::parse_zone_map(&cfg.inputs.zones)?;
        let topology = io::parse_topology(&cfg.inputs.topology)?;
        let gt = match &cfg.inputs.gt {
            Some(path) => Some(io::parse_submission(path)?),
            None => None,
        };
        Ok(Ingested {
            detections: parsed.detections,
            features,
            zone_map,
            topology,
            gt,
        })
    })()
    .map_err(stage)
}

fn sct_cache_key(cfg: &PipelineConfig) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in [&cfg.inputs.detections, &cfg.inputs.features] {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        hasher.update(&bytes);
    }
    hasher.update(serde_json::to_vec(&cfg.tracker).expect("tracker config serialization"));
    hasher.update(b"sct-v1");
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Run per-camera tracking, reusing a cached result when the inputs and the
/// tracker configuration are unchanged.
pub fn run_sct(cfg: &PipelineConfig, ingested: &Ingested) -> Result<Vec<Tracklet>> {
    let stage = Error::in_stage("sct");
    (|| -> Result<Vec<Tracklet>> {
        let cache_path = if cfg.cache {
            let key = sct_cache_key(cfg)?;
            let path = cfg.output_dir.join("cache").join(format!("sct-{key}.jsonl"));
            if path.exists() {
                log::info!("sct cache hit: {}", path.display());
                return io::parse_tracklets(&path, &ingested.features);
            }
            Some(path)
        } else {
            None
        };

        let mut by_camera: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
        for d in &ingested.detections {
            by_camera.entry(d.camera_id).or_default().push(d.clone());
        }
        let cameras: Vec<(u32, Vec<Detection>)> = by_camera.into_iter().collect();
        let mut results: Vec<(u32, Vec<Tracklet>)> = cameras
            .into_par_iter()
            .map(|(camera_id, dets)| {
                sct::track_camera(camera_id, &dets, &cfg.tracker).map(|t| (camera_id, t))
            })
            .collect::<Result<_>>()?;
        results.sort_by_key(|(camera_id, _)| *camera_id);
        let tracklets: Vec<Tracklet> = results.into_iter().flat_map(|(_, t)| t).collect();

        if let Some(path) = cache_path {
            io::emit_tracklets(&tracklets, &path)?;
        }
        Ok(tracklets)
    })()
    .map_err(stage)
}

/// Products of the matching stages for one flag combination.
pub struct MatchingOutput {
    pub trajectories: Vec<GlobalTrajectory>,
    pub merges: Vec<MergeRecord>,
    pub tracklet_count: usize,
    pub similarity: SimilarityMatrix,
    pub mask: DbtmMatrix,
}

/// Run everything downstream of tracking for the given flags.
pub fn run_matching(
    cfg: &PipelineConfig,
    ingested: &Ingested,
    tracklets: &[Tracklet],
    flags: AblationFlags,
) -> Result<MatchingOutput> {
    // zones
    let mut tracklets: Vec<Tracklet> = tracklets.to_vec();
    zones::annotate_endpoints(&mut tracklets, &ingested.zone_map);
    if flags.tfs {
        tracklets = zones::tfs_filter(tracklets);
    }
    let tracklets = tracklets;

    // affinity
    let stage_affinity = Error::in_stage("affinity");
    let (features, similarity) = (|| -> Result<(Vec<Vec<Scalar>>, SimilarityMatrix)> {
        let base_features: Vec<Vec<Scalar>> = tracklets
            .iter()
            .map(affinity::tracklet_feature)
            .collect::<Result<_>>()?;
        if flags.rerank {
            let cameras: Vec<u32> = tracklets.iter().map(|t| t.camera_id).collect();
            let (unbiased, _) = affinity::camera_bias_normalize(&base_features, &cameras);
            let updated = affinity::neighbor_update(&unbiased, cfg.affinity.neighbor_k);
            let params = RerankParams {
                k1: cfg.affinity.rerank_k1,
                k2: cfg.affinity.rerank_k2,
                lambda: cfg.affinity.rerank_lambda,
            };
            let sim = affinity::rerank(&updated, &params)?;
            Ok((updated, sim))
        } else {
            let sim = affinity::raw_similarity(&base_features)?;
            Ok((base_features, sim))
        }
    })()
    .map_err(stage_affinity)?;

    let stage_zones = Error::in_stage("zones");
    let mask = if flags.dbtm {
        zones::build_dbtm(&tracklets, &ingested.topology).map_err(stage_zones)?
    } else {
        DbtmMatrix::all_ones(tracklets.len())
    };
    let masked = affinity::apply_mask(&similarity, &mask).map_err(Error::in_stage("affinity"))?;

    // clustering
    let stage_cluster = Error::in_stage("cluster");
    let (partition, merges) = (|| -> Result<(Vec<Vec<usize>>, Vec<MergeRecord>)> {
        let mut graph = MatchGraph::new(tracklets.len());
        let partition = if flags.scac {
            scac::inter_zone_cluster(
                &tracklets,
                &features,
                &masked.values,
                &mask,
                &ingested.topology,
                cfg.clustering.inter_zone_threshold,
                &mut graph,
            )?;
            scac::inter_cam_cluster(
                &tracklets,
                &features,
                &mask,
                cfg.clustering.inter_cam_threshold,
                &mut graph,
            )?
        } else {
            scac::global_cluster(
                &tracklets,
                &masked.values,
                &mask,
                cfg.clustering.global_threshold,
                &mut graph,
            )?
        };
        Ok((partition, graph.merges))
    })()
    .map_err(stage_cluster)?;

    let trajectories = scac::assign_global_ids(&tracklets, &partition, cfg.include_single_camera)
        .map_err(Error::in_stage("cluster"))?;
    Ok(MatchingOutput {
        trajectories,
        merges,
        tracklet_count: tracklets.len(),
        similarity: masked,
        mask,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub submission_path: PathBuf,
    pub report_path: Option<PathBuf>,
    pub report: Option<MetricReport>,
    pub tracklet_count: usize,
    pub trajectory_count: usize,
}

fn remove_outputs(paths: &[PathBuf]) {
    for p in paths {
        let _ = std::fs::remove_file(p);
    }
}

/// Run the full pipeline and write the submission (plus the metric report
/// when ground truth is configured) under the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let ingested = ingest(cfg)?;
    let tracklets = run_sct(cfg, &ingested)?;
    let output = run_matching(cfg, &ingested, &tracklets, cfg.ablation)?;

    let mut written: Vec<PathBuf> = Vec::new();
    let emit = (|| -> Result<PipelineOutcome> {
        let tracklets_path = cfg.output_dir.join("tracklets.jsonl");
        io::emit_tracklets(&tracklets, &tracklets_path)?;
        written.push(tracklets_path);

        let submission_path = cfg.output_dir.join("submission.txt");
        io::emit_submission(&output.trajectories, &submission_path)?;
        written.push(submission_path.clone());

        let audit_path = cfg.output_dir.join("merge_audit.jsonl");
        let mut audit = String::new();
        for m in &output.merges {
            audit.push_str(&serde_json::to_string(m).expect("merge serialization"));
            audit.push('\n');
        }
        io::write_atomic(&audit_path, &audit)?;
        written.push(audit_path);

        if cfg.debug_dumps {
            let sim_path = cfg.output_dir.join("similarity.csv");
            io::emit_matrix_csv(&output.similarity.values, &sim_path)?;
            written.push(sim_path);
            let mask_path = cfg.output_dir.join("mask.csv");
            io::emit_mask_csv(output.mask.as_matrix(), &mask_path)?;
            written.push(mask_path);
        }

        let (report, report_path) = match &ingested.gt {
            Some(gt) => {
                let pred = io::trajectory_records(&output.trajectories);
                let report =
                    eval::evaluate(gt, &pred, &cfg.eval).map_err(Error::in_stage("eval"))?;
                let path = cfg.output_dir.join("report.json");
                let text =
                    serde_json::to_string_pretty(&report).expect("report serialization");
                io::write_atomic(&path, &text)?;
                written.push(path.clone());
                (Some(report), Some(path))
            }
            None => (None, None),
        };
        Ok(PipelineOutcome {
            submission_path: cfg.output_dir.join("submission.txt"),
            report_path,
            report,
            tracklet_count: output.tracklet_count,
            trajectory_count: output.trajectories.len(),
        })
    })();
    match emit {
        Ok(outcome) => Ok(outcome),
        Err(e) => {
            remove_outputs(&written);
            Err(match e {
                e @ Error::Stage { .. } => e,
                other => Error::Stage {
                    stage: "emit",
                    source: Box::new(other),
                },
            })
        }
    }
}

/// Run only the tracking stage and dump the tracklets.
pub fn run_sct_only(cfg: &PipelineConfig) -> Result<PathBuf> {
    let ingested = ingest(cfg)?;
    let tracklets = run_sct(cfg, &ingested)?;
    let path = cfg.output_dir.join("tracklets.jsonl");
    io::emit_tracklets(&tracklets, &path).map_err(Error::in_stage("sct"))?;
    Ok(path)
}

/// Run the matching stages from an existing tracklet dump.
pub fn run_mtmct(cfg: &PipelineConfig, tracklets_path: &Path) -> Result<PipelineOutcome> {
    let ingested = ingest(cfg)?;
    let tracklets = io::parse_tracklets(tracklets_path, &ingested.features)
        .map_err(Error::in_stage("ingest"))?;
    let output = run_matching(cfg, &ingested, &tracklets, cfg.ablation)?;

    let mut written: Vec<PathBuf> = Vec::new();
    let emit = (|| -> Result<PipelineOutcome> {
        let submission_path = cfg.output_dir.join("submission.txt");
        io::emit_submission(&output.trajectories, &submission_path)?;
        written.push(submission_path.clone());
        let audit_path = cfg.output_dir.join("merge_audit.jsonl");
        let mut audit = String::new();
        for m in &output.merges {
            audit.push_str(&serde_json::to_string(m).expect("merge serialization"));
            audit.push('\n');
        }
        io::write_atomic(&audit_path, &audit)?;
        written.push(audit_path);
        let (report, report_path) = match &ingested.gt {
            Some(gt) => {
                let pred = io::trajectory_records(&output.trajectories);
                let report =
                    eval::evaluate(gt, &pred, &cfg.eval).map_err(Error::in_stage("eval"))?;
                let path = cfg.output_dir.join("report.json");
                let text = serde_json::to_string_pretty(&report).expect("report serialization");
                io::write_atomic(&path, &text)?;
                written.push(path.clone());
                (Some(report), Some(path))
            }
            None => (None, None),
        };
        Ok(PipelineOutcome {
            submission_path,
            report_path,
            report,
            tracklet_count: output.tracklet_count,
            trajectory_count: output.trajectories.len(),
        })
    })();
    emit.map_err(|e| {
        remove_outputs(&written);
        match e {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage: "emit",
                source: Box::new(other),
            },
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub flags: AblationFlags,
    pub metrics: MetricReport,
    pub trajectories: usize,
}

/// Cumulative ablation in the canonical order: baseline, +TFS, +DBTM,
/// +Rerank, +SCAC. All rows reuse one tracking run so the differences isolate
/// the matching modules. Requires ground truth.
pub fn run_ablation(cfg: &PipelineConfig) -> Result<Vec<AblationRow>> {
    let ingested = ingest(cfg)?;
    let gt = ingested
        .gt
        .clone()
        .ok_or_else(|| Error::Stage {
            stage: "ablate",
            source: Box::new(Error::Config("ablation requires a ground-truth file".into())),
        })?;
    let tracklets = run_sct(cfg, &ingested)?;

    let off = AblationFlags {
        tfs: false,
        dbtm: false,
        rerank: false,
        scac: false,
    };
    let row_plan = [
        ("baseline", off),
        ("+TFS", AblationFlags { tfs: true, ..off }),
        ("+DBTM", AblationFlags { tfs: true, dbtm: true, ..off }),
        ("+Rerank", AblationFlags { tfs: true, dbtm: true, rerank: true, ..off }),
        ("+SCAC", AblationFlags { tfs: true, dbtm: true, rerank: true, scac: true }),
    ];

    let mut rows = Vec::new();
    for (label, flags) in row_plan {
        let output = run_matching(cfg, &ingested, &tracklets, flags)?;
        let pred = io::trajectory_records(&output.trajectories);
        let metrics = eval::evaluate(&gt, &pred, &cfg.eval).map_err(Error::in_stage("eval"))?;
        let slug = label.trim_start_matches('+').to_lowercase();
        io::emit_submission(
            &output.trajectories,
            cfg.output_dir.join(format!("submission_{slug}.txt")),
        )?;
        rows.push(AblationRow {
            label: label.to_string(),
            flags,
            metrics,
            trajectories: output.trajectories.len(),
        });
    }
    let text = serde_json::to_string_pretty(&rows).expect("ablation serialization");
    io::write_atomic(cfg.output_dir.join("ablation.json"), &text)?;
    Ok(rows)
}
