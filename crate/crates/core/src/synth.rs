//! Deterministic synthetic scenario generator.
//!
//! Builds a linear chain of cameras along a main road. Main-road vehicles
//! cross every camera in order (forward traffic enters through zone 4 and
//! exits through zone 3, reverse traffic the other way around), side-road
//! vehicles cut across one camera from zone 1 to zone 2, and static false
//! positives sit inside a single zone for the whole sequence. Embeddings are
//! `normalize(identity_mean + camera_bias + noise)`, which exercises the
//! camera-bias subtraction and the reranking stack downstream.
//!
//! Everything is derived from one seeded RNG in a fixed draw order, so equal
//! configs produce byte-identical worlds.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::numeric::normalize;
use crate::types::{
    BBox, CameraTopology, Detection, Polygon, TrackRecord, VehicleClass, ZoneMap,
};
use crate::{Error, Result, Scalar};

pub const IMG_W: Scalar = 1280.0;
pub const IMG_H: Scalar = 720.0;
const ROAD_Y: Scalar = 360.0;
/// Frames a vehicle stays visible inside one camera.
const CROSS_FRAMES: u32 = 60;
/// Start-time spacing between consecutive vehicles of one direction.
const STAGGER: u32 = 17;
const FORWARD_LANES: [Scalar; 4] = [-84.0, -60.0, -36.0, -12.0];
const REVERSE_LANES: [Scalar; 4] = [36.0, 60.0, 84.0, 108.0];
const SIDE_DURATION: u32 = 45;

/// Scenario parameters; all counts may be zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_cameras: usize,
    pub n_vehicles: usize,
    pub frame_count: u32,
    /// Blind-gap length between adjacent cameras, drawn once per camera pair.
    pub transit_time_range: (u32, u32),
    pub embedding_dim: usize,
    /// Angle (radians) between every identity mean and a shared base
    /// direction; small values crowd the identities together.
    pub identity_separation: Scalar,
    pub per_camera_bias_magnitude: Scalar,
    /// Per-component sigma of the Gaussian feature noise.
    pub feature_noise_sigma: Scalar,
    pub bbox_noise_sigma: Scalar,
    pub false_positive_count: usize,
    pub side_road_vehicle_count: usize,
    pub detection_drop_rate: Scalar,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_cameras: 3,
            n_vehicles: 10,
            frame_count: 400,
            transit_time_range: (8, 20),
            embedding_dim: 32,
            identity_separation: std::f64::consts::FRAC_PI_2,
            per_camera_bias_magnitude: 0.0,
            feature_noise_sigma: 0.0,
            bbox_noise_sigma: 0.0,
            false_positive_count: 0,
            side_road_vehicle_count: 0,
            detection_drop_rate: 0.0,
            seed: 7,
        }
    }
}

pub const STRESS_PRESET_NAME: &str = "stress-v1";

/// Fixed stress scenario: six cameras, crowded identities, camera bias,
/// static false positives, side-road traffic and detection drops, so every
/// matching module has measurable work to do.
pub fn stress_preset() -> WorldConfig {
    WorldConfig {
        n_cameras: 6,
        n_vehicles: 40,
        frame_count: 900,
        transit_time_range: (8, 20),
        embedding_dim: 48,
        identity_separation: 0.2,
        per_camera_bias_magnitude: 0.5,
        feature_noise_sigma: 0.05,
        bbox_noise_sigma: 1.5,
        false_positive_count: 6,
        side_road_vehicle_count: 8,
        detection_drop_rate: 0.04,
        seed: 210405,
    }
}

/// Look up a preset by its versioned name.
pub fn preset(name: &str) -> Result<WorldConfig> {
    match name {
        STRESS_PRESET_NAME => Ok(stress_preset()),
        other => Err(Error::Config(format!("unknown preset `{other}`"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestCounts {
    pub cameras: usize,
    pub vehicles: usize,
    pub side_road_vehicles: usize,
    pub false_positives: usize,
    pub detections: usize,
    pub gt_records: usize,
}

/// Written next to the generated files; records exactly what was generated.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub preset: Option<String>,
    pub config: WorldConfig,
    pub counts: ManifestCounts,
}

/// A generated world, in memory.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: WorldConfig,
    pub detections: Vec<Detection>,
    pub zone_map: ZoneMap,
    pub topology: CameraTopology,
    pub gt: Vec<TrackRecord>,
    /// Ground-truth identity per detection; `None` for distractors.
    pub identities: Vec<Option<u32>>,
    /// True identity mean per main-road vehicle (index = gt id - 1).
    pub identity_means: Vec<Vec<Scalar>>,
    /// Unit bias direction per camera, before scaling by the magnitude.
    pub camera_biases: Vec<Vec<Scalar>>,
    pub manifest: Manifest,
}

fn rect(x0: Scalar, y0: Scalar, x1: Scalar, y1: Scalar) -> Polygon {
    Polygon::new(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
}

fn camera_zones() -> [Polygon; 4] {
    [
        rect(0.42 * IMG_W, 0.0, 0.58 * IMG_W, 0.28 * IMG_H),
        rect(0.42 * IMG_W, 0.72 * IMG_H, 0.58 * IMG_W, IMG_H),
        rect(0.70 * IMG_W, 0.20 * IMG_H, IMG_W, 0.80 * IMG_H),
        rect(0.0, 0.20 * IMG_H, 0.30 * IMG_W, 0.80 * IMG_H),
    ]
}

fn class_size(class: VehicleClass) -> (Scalar, Scalar) {
    match class {
        VehicleClass::Car => (80.0, 60.0),
        VehicleClass::Truck => (100.0, 72.0),
        VehicleClass::Bus => (110.0, 80.0),
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Scalar> {
    (0..dim).map(|_| rng.sample::<Scalar, _>(StandardNormal)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Scalar> {
    loop {
        let mut v = gaussian_vec(rng, dim);
        if normalize(&mut v) {
            return v;
        }
    }
}

/// Unit vector at the configured angle from `base`.
fn identity_mean(rng: &mut ChaCha8Rng, base: &[Scalar], angle: Scalar) -> Vec<Scalar> {
    let dim = base.len();
    let r = random_unit(rng, dim);
    let along: Scalar = r.iter().zip(base.iter()).map(|(a, b)| a * b).sum();
    let mut ortho: Vec<Scalar> = r
        .iter()
        .zip(base.iter())
        .map(|(ri, bi)| ri - along * bi)
        .collect();
    if !normalize(&mut ortho) {
        return base.to_vec();
    }
    let mut mean: Vec<Scalar> = base
        .iter()
        .zip(ortho.iter())
        .map(|(b, o)| angle.cos() * b + angle.sin() * o)
        .collect();
    normalize(&mut mean);
    mean
}

struct PendingDetection {
    camera_id: u32,
    frame: u32,
    bbox: BBox,
    confidence: Scalar,
    class: VehicleClass,
    feature: Vec<Scalar>,
    identity: Option<u32>,
    entity_order: usize,
}

struct Emitter<'a> {
    cfg: &'a WorldConfig,
    biases: &'a [Vec<Scalar>],
    out: Vec<PendingDetection>,
}

impl<'a> Emitter<'a> {
    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        rng: &mut ChaCha8Rng,
        camera_index: usize,
        frame: u32,
        true_box: BBox,
        confidence: Scalar,
        class: VehicleClass,
        mean: &[Scalar],
        identity: Option<u32>,
        entity_order: usize,
    ) {
        if self.cfg.detection_drop_rate > 0.0 && rng.gen_bool(self.cfg.detection_drop_rate) {
            return;
        }
        let mut bbox = true_box;
        if self.cfg.bbox_noise_sigma > 0.0 {
            let s = self.cfg.bbox_noise_sigma;
            bbox.x += s * rng.sample::<Scalar, _>(StandardNormal);
            bbox.y += s * rng.sample::<Scalar, _>(StandardNormal);
            bbox.w = (bbox.w + 0.5 * s * rng.sample::<Scalar, _>(StandardNormal)).max(4.0);
            bbox.h = (bbox.h + 0.5 * s * rng.sample::<Scalar, _>(StandardNormal)).max(4.0);
        }
        let mut feature: Vec<Scalar> = mean.to_vec();
        let bias = &self.biases[camera_index];
        for (f, b) in feature.iter_mut().zip(bias.iter()) {
            *f += self.cfg.per_camera_bias_magnitude * b;
        }
        if self.cfg.feature_noise_sigma > 0.0 {
            for f in feature.iter_mut() {
                *f += self.cfg.feature_noise_sigma * rng.sample::<Scalar, _>(StandardNormal);
            }
        }
        if !normalize(&mut feature) {
            feature = mean.to_vec();
        }
        self.out.push(PendingDetection {
            camera_id: 41 + camera_index as u32,
            frame,
            bbox,
            confidence,
            class,
            feature,
            identity,
            entity_order,
        });
    }
}

/// Generate a world. Fails when the schedule cannot fit every main-road
/// vehicle into `frame_count` frames.
pub fn generate(cfg: &WorldConfig) -> Result<SynthWorld> {
    if cfg.n_cameras == 0 {
        return Err(Error::Config("n_cameras must be at least 1".into()));
    }
    if cfg.embedding_dim < 2 {
        return Err(Error::Config("embedding_dim must be at least 2".into()));
    }
    if cfg.transit_time_range.0 < 1 || cfg.transit_time_range.0 > cfg.transit_time_range.1 {
        return Err(Error::Config(
            "transit_time_range must satisfy 1 <= lo <= hi".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.detection_drop_rate) {
        return Err(Error::Config("detection_drop_rate must lie in [0,1]".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = random_unit(&mut rng, cfg.embedding_dim);
    let biases: Vec<Vec<Scalar>> = (0..cfg.n_cameras)
        .map(|_| random_unit(&mut rng, cfg.embedding_dim))
        .collect();
    let gaps: Vec<u32> = (0..cfg.n_cameras.saturating_sub(1))
        .map(|_| rng.gen_range(cfg.transit_time_range.0..=cfg.transit_time_range.1))
        .collect();

    struct MainVehicle {
        forward: bool,
        class: VehicleClass,
        mean: Vec<Scalar>,
        lane_offset: Scalar,
        start: u32,
    }
    let mut vehicles = Vec::with_capacity(cfg.n_vehicles);
    let mut forward_count = 0usize;
    let mut reverse_count = 0usize;
    for _ in 0..cfg.n_vehicles {
        let forward = rng.gen_bool(0.5);
        let class = match rng.gen_range(0..10) {
            0..=6 => VehicleClass::Car,
            7..=8 => VehicleClass::Truck,
            _ => VehicleClass::Bus,
        };
        let mean = identity_mean(&mut rng, &base, cfg.identity_separation);
        let (lane_offset, start) = if forward {
            let k = forward_count;
            forward_count += 1;
            (FORWARD_LANES[k % 4], (k as u32) * STAGGER)
        } else {
            let k = reverse_count;
            reverse_count += 1;
            (REVERSE_LANES[k % 4], (k as u32) * STAGGER)
        };
        vehicles.push(MainVehicle {
            forward,
            class,
            mean,
            lane_offset,
            start,
        });
    }
    let side_means: Vec<Vec<Scalar>> = (0..cfg.side_road_vehicle_count)
        .map(|_| identity_mean(&mut rng, &base, cfg.identity_separation))
        .collect();
    let fp_means: Vec<Vec<Scalar>> = (0..cfg.false_positive_count)
        .map(|_| identity_mean(&mut rng, &base, cfg.identity_separation))
        .collect();

    // camera entry times along the chain, for a vehicle starting at 0
    let mut entry_offset = vec![0u32; cfg.n_cameras];
    for c in 1..cfg.n_cameras {
        entry_offset[c] = entry_offset[c - 1] + CROSS_FRAMES + gaps[c - 1];
    }
    let traversal = entry_offset[cfg.n_cameras - 1] + CROSS_FRAMES;
    for v in &vehicles {
        if v.start + traversal > cfg.frame_count {
            return Err(Error::Config(format!(
                "frame_count {} too small: a vehicle starting at frame {} needs {} frames to \
                 traverse the chain",
                cfg.frame_count, v.start, traversal
            )));
        }
    }

    let mut emitter = Emitter {
        cfg,
        biases: &biases,
        out: Vec::new(),
    };
    let mut gt = Vec::new();

    // main-road vehicles
    for (vi, v) in vehicles.iter().enumerate() {
        let gt_id = vi as u32 + 1;
        let (w, h) = class_size(v.class);
        let cameras: Vec<usize> = if v.forward {
            (0..cfg.n_cameras).collect()
        } else {
            (0..cfg.n_cameras).rev().collect()
        };
        for (leg, &cam) in cameras.iter().enumerate() {
            let entry = v.start
                + if v.forward {
                    entry_offset[cam]
                } else {
                    entry_offset[cfg.n_cameras - 1] - entry_offset[cam]
                };
            debug_assert_eq!(
                entry,
                v.start
                    + (0..leg).map(|l| {
                        let c = cameras[l];
                        let g = if v.forward { gaps[c] } else { gaps[c - 1] };
                        CROSS_FRAMES + g
                    }).sum::<u32>()
            );
            for k in 0..CROSS_FRAMES {
                let frame = entry + k;
                let frac = k as Scalar / (CROSS_FRAMES - 1) as Scalar;
                let frac = if v.forward { frac } else { 1.0 - frac };
                let x = frac * (IMG_W - w);
                let y = ROAD_Y + v.lane_offset - h / 2.0;
                let true_box = BBox::new(x, y, w, h);
                gt.push(TrackRecord {
                    camera_id: 41 + cam as u32,
                    id: gt_id,
                    frame,
                    bbox: true_box,
                });
                emitter.emit(
                    &mut rng,
                    cam,
                    frame,
                    true_box,
                    0.9,
                    v.class,
                    &v.mean,
                    Some(gt_id),
                    vi,
                );
            }
        }
    }

    // side-road vehicles: one camera each, zone 1 down to zone 2
    for (si, mean) in side_means.iter().enumerate() {
        let cam = si % cfg.n_cameras;
        let window = cfg.frame_count.saturating_sub(SIDE_DURATION + 10).max(1);
        let start = (20 + si as u32 * 37) % window;
        let (w, h) = (70.0, 55.0);
        let y0 = 0.05 * IMG_H;
        let y1 = 0.95 * IMG_H;
        for k in 0..SIDE_DURATION {
            let frame = start + k;
            let frac = k as Scalar / (SIDE_DURATION - 1) as Scalar;
            let anchor_y = y0 + frac * (y1 - y0);
            let true_box = BBox::new(0.5 * IMG_W - w / 2.0, anchor_y - h, w, h);
            emitter.emit(
                &mut rng,
                cam,
                frame,
                true_box,
                0.85,
                VehicleClass::Car,
                mean,
                None,
                cfg.n_vehicles + si,
            );
        }
    }

    // static false positives: a constant box strictly inside one zone
    for (fi, mean) in fp_means.iter().enumerate() {
        let cam = fi % cfg.n_cameras;
        let slot = (fi / cfg.n_cameras) as Scalar;
        let (w, h) = (90.0, 70.0);
        let anchor = if fi % 2 == 0 {
            (0.47 * IMG_W + slot * 30.0, 0.14 * IMG_H)
        } else {
            (0.08 * IMG_W + slot * 40.0, 0.50 * IMG_H)
        };
        let true_box = BBox::new(anchor.0 - w / 2.0, anchor.1 - h, w, h);
        for frame in 0..cfg.frame_count {
            emitter.emit(
                &mut rng,
                cam,
                frame,
                true_box,
                0.65,
                VehicleClass::Car,
                mean,
                None,
                cfg.n_vehicles + cfg.side_road_vehicle_count + fi,
            );
        }
    }

    let mut pending = emitter.out;
    pending.sort_by_key(|d| (d.camera_id, d.frame, d.entity_order));
    let mut detections = Vec::with_capacity(pending.len());
    let mut identities = Vec::with_capacity(pending.len());
    for (idx, p) in pending.into_iter().enumerate() {
        identities.push(p.identity);
        detections.push(Detection {
            camera_id: p.camera_id,
            frame: p.frame,
            bbox: p.bbox,
            confidence: p.confidence,
            class: p.class,
            feature: p.feature,
            feature_index: idx,
        });
    }

    let mut zone_map = ZoneMap::new();
    for c in 0..cfg.n_cameras {
        zone_map.insert(41 + c as u32, camera_zones());
    }
    let topology = CameraTopology::new((0..cfg.n_cameras).map(|c| 41 + c as u32).collect())?;

    let manifest = Manifest {
        format_version: 1,
        preset: None,
        config: cfg.clone(),
        counts: ManifestCounts {
            cameras: cfg.n_cameras,
            vehicles: cfg.n_vehicles,
            side_road_vehicles: cfg.side_road_vehicle_count,
            false_positives: cfg.false_positive_count,
            detections: detections.len(),
            gt_records: gt.len(),
        },
    };
    Ok(SynthWorld {
        config: cfg.clone(),
        detections,
        zone_map,
        topology,
        gt,
        identities,
        identity_means: vehicles.into_iter().map(|v| v.mean).collect(),
        camera_biases: biases,
        manifest,
    })
}

/// Paths of the files written by [`write_world`].
#[derive(Debug, Clone)]
pub struct WorldPaths {
    pub detections: PathBuf,
    pub features: PathBuf,
    pub zones: PathBuf,
    pub topology: PathBuf,
    pub gt: PathBuf,
    pub manifest: PathBuf,
}

/// Write every artifact of a generated world into a directory.
pub fn write_world(world: &SynthWorld, dir: impl AsRef<Path>, preset: Option<&str>) -> Result<WorldPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = WorldPaths {
        detections: dir.join("detections.txt"),
        features: dir.join("features.txt"),
        zones: dir.join("zones.json"),
        topology: dir.join("topology.json"),
        gt: dir.join("gt.txt"),
        manifest: dir.join("manifest.json"),
    };
    io::emit_detections(&world.detections, &paths.detections, &paths.features)?;
    io::emit_zone_map(&world.zone_map, &paths.zones)?;
    io::emit_topology(&world.topology, &paths.topology)?;
    io::emit_track_records(&world.gt, &paths.gt)?;
    let manifest = Manifest {
        preset: preset.map(|s| s.to_string()),
        ..world.manifest.clone()
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    io::write_atomic(&paths.manifest, &text)?;
    Ok(paths)
}
