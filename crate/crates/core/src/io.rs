//! File ingestion and emission.
//!
//! Formats, all line-oriented or JSON:
//! - detections: `camera_id frame x y w h confidence class`, one per line,
//!   with a companion features file holding one row of `d` reals per
//!   detection line (same order).
//! - zone map: JSON `{ "<camera_id>": { "1": [[x,y],...], ..., "4": ... } }`.
//! - topology: JSON array of camera ids in driving order.
//! - trajectory files (submissions and ground truth):
//!   `camera_id global_id frame x y w h -1 -1`.
//!
//! Floats are written with the shortest representation that parses back to
//! the identical value, so emit/parse round-trips are bit-exact.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::{normalize, Matrix};
use crate::types::{
    BBox, CameraTopology, Detection, GlobalTrajectory, Polygon, TrackRecord, Tracklet,
    TrackletObservation, VehicleClass, ZoneMap,
};
use crate::{Error, Result, Scalar};

/// Detections accepted from a file plus the 0-based indices of rows that were
/// rejected for degenerate box sizes.
#[derive(Debug, Clone)]
pub struct ParsedDetections {
    pub detections: Vec<Detection>,
    pub rejected_rows: Vec<usize>,
}

pub fn read_to_string(path: impl AsRef<Path>) -> Result<String> {
    std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))
}

/// Write a file through a temporary sibling so failures never leave a
/// truncated file behind.
pub fn write_atomic(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line_no: usize,
    token: &str,
    what: &str,
) -> Result<T> {
    token
        .parse::<T>()
        .map_err(|_| Error::parse(path, line_no, format!("invalid {what} `{token}`")))
}

/// Parse a detection file and its companion feature file.
///
/// Features are L2-normalized on ingestion. Rows with non-positive width or
/// height are skipped and reported through `rejected_rows`.
pub fn parse_detections(
    det_path: impl AsRef<Path>,
    feat_path: impl AsRef<Path>,
    feature_dim: usize,
) -> Result<ParsedDetections> {
    let det_path = det_path.as_ref();
    let feat_path = feat_path.as_ref();
    let det_text = read_to_string(det_path)?;
    let det_lines: Vec<&str> = det_text.lines().collect();
    let features = load_features(feat_path, feature_dim)?;
    if det_lines.len() != features.len() {
        return Err(Error::Format(format!(
            "{} has {} rows but {} has {} rows",
            det_path.display(),
            det_lines.len(),
            feat_path.display(),
            features.len()
        )));
    }

    let mut detections = Vec::with_capacity(det_lines.len());
    let mut rejected_rows = Vec::new();
    for (idx, line) in det_lines.iter().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(
                det_path,
                line_no,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let camera_id: u32 = parse_field(det_path, line_no, fields[0], "camera id")?;
        let frame: u32 = parse_field(det_path, line_no, fields[1], "frame")?;
        let x: Scalar = parse_field(det_path, line_no, fields[2], "x")?;
        let y: Scalar = parse_field(det_path, line_no, fields[3], "y")?;
        let w: Scalar = parse_field(det_path, line_no, fields[4], "w")?;
        let h: Scalar = parse_field(det_path, line_no, fields[5], "h")?;
        let confidence: Scalar = parse_field(det_path, line_no, fields[6], "confidence")?;
        let class: VehicleClass = fields[7]
            .parse()
            .map_err(|e: String| Error::parse(det_path, line_no, e))?;
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::parse(det_path, line_no, "non-finite box coordinate"));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::parse(
                det_path,
                line_no,
                format!("confidence {confidence} outside [0,1]"),
            ));
        }
        if w <= 0.0 || h <= 0.0 {
            rejected_rows.push(idx);
            continue;
        }
        detections.push(Detection {
            camera_id,
            frame,
            bbox: BBox::new(x, y, w, h),
            confidence,
            class,
            feature: features[idx].clone(),
            feature_index: idx,
        });
    }
    Ok(ParsedDetections {
        detections,
        rejected_rows,
    })
}

/// Load a feature file: one row of `feature_dim` reals per line, L2-normalized.
pub fn load_features(path: impl AsRef<Path>, feature_dim: usize) -> Result<Vec<Vec<Scalar>>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut row = Vec::with_capacity(feature_dim);
        for token in line.split_whitespace() {
            row.push(parse_field::<Scalar>(path, line_no, token, "feature value")?);
        }
        if row.len() != feature_dim {
            return Err(Error::parse(
                path,
                line_no,
                format!("feature row has {} values, expected {feature_dim}", row.len()),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, line_no, "non-finite feature value"));
        }
        if !normalize(&mut row) {
            return Err(Error::parse(path, line_no, "feature row has zero norm"));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Write detections and their features side by side, in input order.
pub fn emit_detections(
    detections: &[Detection],
    det_path: impl AsRef<Path>,
    feat_path: impl AsRef<Path>,
) -> Result<()> {
    let mut det_out = String::new();
    let mut feat_out = String::new();
    for d in detections {
        writeln!(
            det_out,
            "{} {} {} {} {} {} {} {}",
            d.camera_id, d.frame, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.confidence, d.class
        )
        .expect("string write");
        let mut first = true;
        for v in &d.feature {
            if !first {
                feat_out.push(' ');
            }
            write!(feat_out, "{v}").expect("string write");
            first = false;
        }
        feat_out.push('\n');
    }
    write_atomic(det_path, &det_out)?;
    write_atomic(feat_path, &feat_out)
}

fn json_number(v: &serde_json::Value, what: &str) -> Result<Scalar> {
    v.as_f64()
        .ok_or_else(|| Error::Format(format!("{what} is not a number")))
}

/// Parse the zone-map JSON config.
///
/// Every camera must define all four labels; polygons need at least three
/// vertices, may optionally repeat the first vertex to close the ring, and
/// must be simple (no self-intersections).
pub fn parse_zone_map(path: impl AsRef<Path>) -> Result<ZoneMap> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let object = value
        .as_object()
        .ok_or_else(|| Error::Format(format!("{}: top level must be an object", path.display())))?;

    let mut map = ZoneMap::new();
    for (cam_key, zones_value) in object {
        let camera_id: u32 = cam_key
            .parse()
            .map_err(|_| Error::Format(format!("invalid camera id `{cam_key}`")))?;
        let zones_obj = zones_value.as_object().ok_or_else(|| {
            Error::Format(format!("camera {camera_id}: zones must be an object"))
        })?;
        let mut zones: Vec<Option<Polygon>> = vec![None; 4];
        for (label_key, poly_value) in zones_obj {
            let label: u8 = label_key.parse().map_err(|_| {
                Error::Config(format!("camera {camera_id}: invalid zone label `{label_key}`"))
            })?;
            if !(1..=4).contains(&label) {
                return Err(Error::Config(format!(
                    "camera {camera_id}: zone label {label} outside 1..4"
                )));
            }
            let verts_value = poly_value.as_array().ok_or_else(|| {
                Error::Format(format!("camera {camera_id} zone {label}: polygon must be an array"))
            })?;
            let mut vertices = Vec::with_capacity(verts_value.len());
            for v in verts_value {
                let pair = v.as_array().filter(|p| p.len() == 2).ok_or_else(|| {
                    Error::Format(format!(
                        "camera {camera_id} zone {label}: vertex must be [x, y]"
                    ))
                })?;
                vertices.push((
                    json_number(&pair[0], "vertex x")?,
                    json_number(&pair[1], "vertex y")?,
                ));
            }
            if vertices.len() > 3 && vertices.first() == vertices.last() {
                vertices.pop();
            }
            if vertices.len() < 3 {
                return Err(Error::Config(format!(
                    "camera {camera_id} zone {label}: polygon needs at least 3 vertices"
                )));
            }
            let polygon = Polygon::new(vertices);
            if !polygon_is_simple(&polygon) {
                return Err(Error::Config(format!(
                    "camera {camera_id} zone {label}: polygon is self-intersecting"
                )));
            }
            zones[(label - 1) as usize] = Some(polygon);
        }
        let mut filled = Vec::with_capacity(4);
        for (i, z) in zones.into_iter().enumerate() {
            match z {
                Some(p) => filled.push(p),
                None => {
                    return Err(Error::Config(format!(
                        "camera {camera_id}: missing zone label {}",
                        i + 1
                    )))
                }
            }
        }
        let zones: [Polygon; 4] = filled.try_into().expect("exactly four zones");
        map.insert(camera_id, zones);
    }
    Ok(map)
}

pub fn emit_zone_map(map: &ZoneMap, path: impl AsRef<Path>) -> Result<()> {
    let mut root = serde_json::Map::new();
    for camera_id in map.camera_ids() {
        let zones = map.zones(camera_id).expect("camera present");
        let mut cam_obj = serde_json::Map::new();
        for (idx, poly) in zones.iter().enumerate() {
            let verts: Vec<serde_json::Value> = poly
                .vertices
                .iter()
                .map(|&(x, y)| serde_json::json!([x, y]))
                .collect();
            cam_obj.insert((idx + 1).to_string(), serde_json::Value::Array(verts));
        }
        root.insert(camera_id.to_string(), serde_json::Value::Object(cam_obj));
    }
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(root))
        .expect("zone map serialization");
    write_atomic(path, &text)
}

fn cross(o: (Scalar, Scalar), a: (Scalar, Scalar), b: (Scalar, Scalar)) -> Scalar {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(a: (Scalar, Scalar), b: (Scalar, Scalar), p: (Scalar, Scalar)) -> bool {
    cross(a, b, p).abs() < 1e-9
        && p.0 >= a.0.min(b.0) - 1e-9
        && p.0 <= a.0.max(b.0) + 1e-9
        && p.1 >= a.1.min(b.1) - 1e-9
        && p.1 <= a.1.max(b.1) + 1e-9
}

fn segments_intersect(
    p1: (Scalar, Scalar),
    p2: (Scalar, Scalar),
    p3: (Scalar, Scalar),
    p4: (Scalar, Scalar),
) -> bool {
    let d1 = cross(p3, p4, p1);
    let d2 = cross(p3, p4, p2);
    let d3 = cross(p1, p2, p3);
    let d4 = cross(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1.abs() < 1e-9 && on_segment(p3, p4, p1))
        || (d2.abs() < 1e-9 && on_segment(p3, p4, p2))
        || (d3.abs() < 1e-9 && on_segment(p1, p2, p3))
        || (d4.abs() < 1e-9 && on_segment(p1, p2, p4))
}

/// True when no two non-adjacent edges of the ring touch.
fn polygon_is_simple(poly: &Polygon) -> bool {
    let n = poly.vertices.len();
    for i in 0..n {
        let a1 = poly.vertices[i];
        let a2 = poly.vertices[(i + 1) % n];
        for j in (i + 1)..n {
            // skip the edge itself and the two neighbours sharing a vertex
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let b1 = poly.vertices[j];
            let b2 = poly.vertices[(j + 1) % n];
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

pub fn parse_topology(path: impl AsRef<Path>) -> Result<CameraTopology> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let ids: Vec<u32> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    CameraTopology::new(ids)
}

pub fn emit_topology(topology: &CameraTopology, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string(topology.cameras()).expect("topology serialization");
    write_atomic(path, &text)
}

/// Parse a trajectory file (submission or ground truth).
pub fn parse_submission(path: impl AsRef<Path>) -> Result<Vec<TrackRecord>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 9 fields, found {}", fields.len()),
            ));
        }
        let camera_id: u32 = parse_field(path, line_no, fields[0], "camera id")?;
        let id: u32 = parse_field(path, line_no, fields[1], "trajectory id")?;
        let frame: u32 = parse_field(path, line_no, fields[2], "frame")?;
        let x: Scalar = parse_field(path, line_no, fields[3], "x")?;
        let y: Scalar = parse_field(path, line_no, fields[4], "y")?;
        let w: Scalar = parse_field(path, line_no, fields[5], "w")?;
        let h: Scalar = parse_field(path, line_no, fields[6], "h")?;
        // world-coordinate placeholders, must parse but are ignored
        let _: Scalar = parse_field(path, line_no, fields[7], "world x")?;
        let _: Scalar = parse_field(path, line_no, fields[8], "world y")?;
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::parse(path, line_no, "box width/height must be positive"));
        }
        if !seen.insert((camera_id, id, frame)) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate entry for camera {camera_id} id {id} frame {frame}"),
            ));
        }
        records.push(TrackRecord {
            camera_id,
            id,
            frame,
            bbox: BBox::new(x, y, w, h),
        });
    }
    Ok(records)
}

fn format_records(records: &mut Vec<TrackRecord>) -> String {
    records.sort_by_key(|r| (r.camera_id, r.frame, r.id));
    let mut out = String::new();
    for r in records {
        writeln!(
            out,
            "{} {} {} {} {} {} {} -1 -1",
            r.camera_id, r.id, r.frame, r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h
        )
        .expect("string write");
    }
    out
}

/// Write identity-labelled records sorted by camera, then frame, then id.
pub fn emit_track_records(records: &[TrackRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut records = records.to_vec();
    write_atomic(path, &format_records(&mut records))
}

pub fn trajectory_records(trajectories: &[GlobalTrajectory]) -> Vec<TrackRecord> {
    let mut records = Vec::new();
    for traj in trajectories {
        for member in &traj.members {
            for obs in &member.observations {
                records.push(TrackRecord {
                    camera_id: member.camera_id,
                    id: traj.global_id,
                    frame: obs.t,
                    bbox: obs.bbox,
                });
            }
        }
    }
    records
}

/// Write a submission file: one line per (camera, global id, frame).
pub fn emit_submission(trajectories: &[GlobalTrajectory], path: impl AsRef<Path>) -> Result<()> {
    let mut records = trajectory_records(trajectories);
    write_atomic(path, &format_records(&mut records))
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackletDumpRow {
    camera: u32,
    local_id: u32,
    obs: Vec<ObsRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObsRow {
    t: u32,
    bbox: [Scalar; 4],
    feature_index: usize,
}

/// Dump per-camera tracklets as JSON lines referencing the feature file rows.
pub fn emit_tracklets(tracklets: &[Tracklet], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for t in tracklets {
        let row = TrackletDumpRow {
            camera: t.camera_id,
            local_id: t.local_id,
            obs: t
                .observations
                .iter()
                .map(|o| ObsRow {
                    t: o.t,
                    bbox: [o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h],
                    feature_index: o.feature_index,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&row).expect("tracklet serialization"));
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Reload a tracklet dump, resolving features from the ingested feature table.
pub fn parse_tracklets(path: impl AsRef<Path>, features: &[Vec<Scalar>]) -> Result<Vec<Tracklet>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut tracklets = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let row: TrackletDumpRow = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if row.obs.is_empty() {
            return Err(Error::parse(path, idx + 1, "tracklet has no observations"));
        }
        let mut observations = Vec::with_capacity(row.obs.len());
        for o in row.obs {
            let feature = features.get(o.feature_index).ok_or_else(|| {
                Error::Format(format!(
                    "tracklet dump references feature row {} but only {} rows were loaded",
                    o.feature_index,
                    features.len()
                ))
            })?;
            observations.push(TrackletObservation {
                t: o.t,
                bbox: BBox::new(o.bbox[0], o.bbox[1], o.bbox[2], o.bbox[3]),
                feature: feature.clone(),
                feature_index: o.feature_index,
            });
        }
        tracklets.push(Tracklet {
            camera_id: row.camera,
            local_id: row.local_id,
            observations,
            endpoints: None,
        });
    }
    Ok(tracklets)
}

/// Debug dump of a similarity matrix, row-major CSV with 6 decimal places.
pub fn emit_matrix_csv(matrix: &Matrix<Scalar>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for i in 0..matrix.rows() {
        let row: Vec<String> = (0..matrix.cols())
            .map(|j| format!("{:.6}", matrix[(i, j)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Debug dump of a binary mask as 0/1 CSV.
pub fn emit_mask_csv(mask: &Matrix<bool>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for i in 0..mask.rows() {
        let row: Vec<&str> = (0..mask.cols())
            .map(|j| if mask[(i, j)] { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, &out)
}
