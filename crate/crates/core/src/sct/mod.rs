//! Single-camera tracking: detection filtering, NMS, two-stage cascade
//! matching (appearance gated by motion, then IoU) and track lifecycle
//! management. Emits per-camera tracklets.

pub mod kalman;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numeric::{cosine, iou, normalize, CostMatrix};
use crate::types::{BBox, Detection, Tracklet, TrackletObservation};
use crate::{Error, Result, Scalar};

pub use kalman::{KalmanFilter, KalmanState, CHI2_INV95_4DOF};

/// Tracker hyperparameters. The detection thresholds follow the reference
/// setup (confidence 0.1, area 750 px); the rest are the usual
/// tracking-by-detection defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Minimum detection confidence kept (inclusive).
    pub conf_threshold: Scalar,
    /// Minimum box area in pixels kept (inclusive).
    pub area_threshold: Scalar,
    /// IoU above which NMS suppresses the lower-confidence box.
    pub nms_iou_threshold: Scalar,
    /// Maximum appearance cost (1 - cosine) accepted in stage one.
    pub appearance_cost_limit: Scalar,
    /// Maximum IoU cost (1 - IoU) accepted in stage two.
    pub iou_cost_limit: Scalar,
    /// Squared Mahalanobis gate for stage one.
    pub gate_chi2: Scalar,
    /// Smoothing factor of the exponential moving average over features.
    pub ema_alpha: Scalar,
    /// Frames a lost track survives without a detection.
    pub max_age: u32,
    /// Minimum number of observations for an emitted tracklet.
    pub min_length: usize,
    /// Consecutive hits needed to confirm a tentative track.
    pub n_init: u32,
    pub std_weight_position: Scalar,
    pub std_weight_velocity: Scalar,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            conf_threshold: 0.1,
            area_threshold: 750.0,
            nms_iou_threshold: 0.5,
            appearance_cost_limit: 0.4,
            iou_cost_limit: 0.5,
            gate_chi2: CHI2_INV95_4DOF,
            ema_alpha: 0.9,
            max_age: 30,
            min_length: 2,
            n_init: 2,
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
        }
    }
}

/// Measurement vector `(cx, cy, a, h)` of a box.
pub fn bbox_to_measurement(b: &BBox) -> kalman::Measurement<Scalar> {
    let (cx, cy) = b.center();
    kalman::Measurement::from_column_slice(&[cx, cy, b.w / b.h, b.h])
}

/// Box reconstructed from a state mean.
pub fn measurement_to_bbox(m: &kalman::Measurement<Scalar>) -> BBox {
    let h = m[3];
    let w = m[2] * h;
    BBox::new(m[0] - w / 2.0, m[1] - h / 2.0, w, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
    Removed,
}

/// One tracked vehicle inside a camera.
#[derive(Debug, Clone)]
pub struct Track {
    pub local_id: u32,
    pub state: KalmanState<Scalar>,
    pub smoothed_feature: Vec<Scalar>,
    pub status: TrackStatus,
    pub hits: u32,
    pub time_since_update: u32,
    pub last_frame: u32,
    pub observations: Vec<TrackletObservation>,
}

impl Track {
    fn new(kf: &KalmanFilter<Scalar>, local_id: u32, frame: u32, det: &Detection) -> Self {
        let state = kf.initiate(&bbox_to_measurement(&det.bbox));
        Track {
            local_id,
            state,
            smoothed_feature: det.feature.clone(),
            status: TrackStatus::Tentative,
            hits: 1,
            time_since_update: 0,
            last_frame: frame,
            observations: vec![TrackletObservation {
                t: frame,
                bbox: det.bbox,
                feature: det.feature.clone(),
                feature_index: det.feature_index,
            }],
        }
    }

    pub fn predicted_bbox(&self) -> BBox {
        let m = kalman::Measurement::from_column_slice(&[
            self.state.mean[0],
            self.state.mean[1],
            self.state.mean[2],
            self.state.mean[3],
        ]);
        measurement_to_bbox(&m)
    }

    fn record(&mut self, kf: &KalmanFilter<Scalar>, frame: u32, det: &Detection, cfg: &TrackerConfig) -> Result<()> {
        self.state = kf.update(&self.state, &bbox_to_measurement(&det.bbox))?;
        // the tracklet keeps raw detection features, smoothing is internal
        self.observations.push(TrackletObservation {
            t: frame,
            bbox: det.bbox,
            feature: det.feature.clone(),
            feature_index: det.feature_index,
        });
        let alpha = cfg.ema_alpha;
        for (s, &f) in self.smoothed_feature.iter_mut().zip(det.feature.iter()) {
            *s = alpha * *s + (1.0 - alpha) * f;
        }
        if !normalize(&mut self.smoothed_feature) {
            self.smoothed_feature = det.feature.clone();
        }
        self.hits += 1;
        self.time_since_update = 0;
        self.last_frame = frame;
        self.status = match self.status {
            TrackStatus::Tentative if self.hits >= cfg.n_init => TrackStatus::Active,
            TrackStatus::Tentative => TrackStatus::Tentative,
            _ => TrackStatus::Active,
        };
        Ok(())
    }

    fn mark_missed(&mut self, cfg: &TrackerConfig) {
        self.time_since_update += 1;
        self.status = match self.status {
            TrackStatus::Tentative => TrackStatus::Removed,
            TrackStatus::Active | TrackStatus::Lost => {
                if self.time_since_update > cfg.max_age {
                    TrackStatus::Removed
                } else {
                    TrackStatus::Lost
                }
            }
            TrackStatus::Removed => TrackStatus::Removed,
        };
    }
}

/// Drop detections below the confidence or area thresholds (both inclusive).
pub fn filter_detections(
    detections: &[Detection],
    conf_threshold: Scalar,
    area_threshold: Scalar,
) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.confidence >= conf_threshold && d.bbox.area() >= area_threshold)
        .cloned()
        .collect()
}

/// Class-agnostic non-maximum suppression over one camera-frame.
///
/// Among boxes overlapping above `iou_threshold` only the higher-confidence
/// one survives; confidence ties keep the lower original index. Survivors are
/// returned in their original order.
pub fn nms(detections: &[Detection], iou_threshold: Scalar, conf_threshold: Scalar) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].confidence >= conf_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; detections.len()];
    for (pos, &i) in order.iter().enumerate() {
        let mut suppressed = false;
        for &j in &order[..pos] {
            if keep[j] && iou(&detections[i].bbox, &detections[j].bbox) > iou_threshold {
                suppressed = true;
                break;
            }
        }
        keep[i] = !suppressed;
    }
    detections
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, d)| d.clone())
        .collect()
}

/// Result of one matching round, all indices into the input slices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Two-stage cascade matching.
///
/// Stage one associates by appearance (cost `1 - cosine` between the track's
/// smoothed feature and the detection feature) gated by the squared
/// Mahalanobis distance of the detection under the track state. Stage two
/// matches the leftovers by IoU of the predicted box.
pub fn cascade_match(
    kf: &KalmanFilter<Scalar>,
    tracks: &[Track],
    detections: &[Detection],
    cfg: &TrackerConfig,
) -> Result<MatchOutcome> {
    let n_tracks = tracks.len();
    let n_dets = detections.len();
    let mut matches = Vec::new();
    let mut free_tracks: Vec<usize> = (0..n_tracks).collect();
    let mut free_dets: Vec<usize> = (0..n_dets).collect();

    if !free_tracks.is_empty() && !free_dets.is_empty() {
        // stage 1: appearance with motion gate
        let cost = CostMatrix::from_fn(free_tracks.len(), free_dets.len(), |ti, di| {
            let track = &tracks[free_tracks[ti]];
            let det = &detections[free_dets[di]];
            let gate = kf.gating_distance(&track.state, &bbox_to_measurement(&det.bbox));
            if gate > cfg.gate_chi2 {
                return Scalar::INFINITY;
            }
            let sim = cosine(&track.smoothed_feature, &det.feature).unwrap_or(-1.0);
            let c = 1.0 - sim;
            if c > cfg.appearance_cost_limit {
                Scalar::INFINITY
            } else {
                c
            }
        })?;
        let assigned = crate::numeric::min_cost_assignment(&cost);
        let mut used_tracks = vec![false; free_tracks.len()];
        let mut used_dets = vec![false; free_dets.len()];
        for (ti, di) in assigned {
            matches.push((free_tracks[ti], free_dets[di]));
            used_tracks[ti] = true;
            used_dets[di] = true;
        }
        free_tracks = free_tracks
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !used_tracks[*i])
            .map(|(_, t)| t)
            .collect();
        free_dets = free_dets
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !used_dets[*i])
            .map(|(_, d)| d)
            .collect();
    }

    if !free_tracks.is_empty() && !free_dets.is_empty() {
        // stage 2: IoU of predicted boxes
        let cost = CostMatrix::from_fn(free_tracks.len(), free_dets.len(), |ti, di| {
            let track = &tracks[free_tracks[ti]];
            let det = &detections[free_dets[di]];
            let c = 1.0 - iou(&track.predicted_bbox(), &det.bbox);
            if c > cfg.iou_cost_limit {
                Scalar::INFINITY
            } else {
                c
            }
        })?;
        let assigned = crate::numeric::min_cost_assignment(&cost);
        let mut used_tracks = vec![false; free_tracks.len()];
        let mut used_dets = vec![false; free_dets.len()];
        for (ti, di) in assigned {
            matches.push((free_tracks[ti], free_dets[di]));
            used_tracks[ti] = true;
            used_dets[di] = true;
        }
        free_tracks = free_tracks
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !used_tracks[*i])
            .map(|(_, t)| t)
            .collect();
        free_dets = free_dets
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !used_dets[*i])
            .map(|(_, d)| d)
            .collect();
    }

    matches.sort_unstable();
    Ok(MatchOutcome {
        matches,
        unmatched_tracks: free_tracks,
        unmatched_detections: free_dets,
    })
}

/// Run the tracker over one camera's detections and emit its tracklets.
///
/// Frames are processed strictly in increasing order; tracks lost for more
/// than `max_age` frames are terminated and tracklets shorter than
/// `min_length` are dropped.
pub fn track_camera(
    camera_id: u32,
    detections: &[Detection],
    cfg: &TrackerConfig,
) -> Result<Vec<Tracklet>> {
    for d in detections {
        if d.camera_id != camera_id {
            return Err(Error::Config(format!(
                "detection from camera {} passed to tracker of camera {camera_id}",
                d.camera_id
            )));
        }
    }
    let mut by_frame: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for d in detections {
        by_frame.entry(d.frame).or_default().push(d.clone());
    }

    let kf = KalmanFilter::new(cfg.std_weight_position, cfg.std_weight_velocity);
    let mut tracks: Vec<Track> = Vec::new();
    let mut finished: Vec<Track> = Vec::new();
    let mut next_id: u32 = 1;

    let (Some(&first), Some(&last)) = (by_frame.keys().next(), by_frame.keys().next_back()) else {
        return Ok(Vec::new());
    };

    for frame in first..=last {
        let empty = Vec::new();
        let raw = by_frame.get(&frame).unwrap_or(&empty);
        let filtered = filter_detections(raw, cfg.conf_threshold, cfg.area_threshold);
        let dets = nms(&filtered, cfg.nms_iou_threshold, cfg.conf_threshold);

        for track in tracks.iter_mut() {
            track.state = kf.predict(&track.state);
        }

        let outcome = cascade_match(&kf, &tracks, &dets, cfg)?;
        for (ti, di) in &outcome.matches {
            tracks[*ti].record(&kf, frame, &dets[*di], cfg)?;
        }
        for ti in &outcome.unmatched_tracks {
            tracks[*ti].mark_missed(cfg);
        }
        for di in &outcome.unmatched_detections {
            tracks.push(Track::new(&kf, next_id, frame, &dets[*di]));
            next_id += 1;
        }

        let mut still_live = Vec::with_capacity(tracks.len());
        for track in tracks.drain(..) {
            if track.status == TrackStatus::Removed {
                finished.push(track);
            } else {
                still_live.push(track);
            }
        }
        tracks = still_live;
    }
    finished.extend(tracks);
    finished.sort_by_key(|t| t.local_id);

    let mut tracklets = Vec::new();
    for track in finished {
        if track.observations.len() < cfg.min_length {
            continue;
        }
        let tracklet = Tracklet {
            camera_id,
            local_id: track.local_id,
            observations: track.observations,
            endpoints: None,
        };
        debug_assert!(tracklet.times_strictly_increasing());
        tracklets.push(tracklet);
    }
    Ok(tracklets)
}
