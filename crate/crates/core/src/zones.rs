//! Crossroad-zone logic: zone assignment for tracklets, the tracklet filter
//! strategy (TFS) and the direction-based temporal mask (DBTM).
//!
//! Each camera view is split into four labelled zones. Zones 1 and 2 belong to
//! the road crossing the main road, zone 3 faces the next camera along the
//! topology and zone 4 the previous one. A tracklet's start/end zones and
//! times decide both whether it stays (TFS) and which other tracklets it can
//! never match (DBTM).

use crate::numeric::Matrix;
use crate::types::{BBox, CameraTopology, Polygon, Tracklet, TrackletEndpoints, ZoneMap};
use crate::{Error, Result, Scalar};

/// Binary mask over tracklet pairs; `true` means the pair may match.
#[derive(Debug, Clone, PartialEq)]
pub struct DbtmMatrix {
    mask: Matrix<bool>,
}

impl DbtmMatrix {
    pub fn all_ones(n: usize) -> Self {
        DbtmMatrix {
            mask: Matrix::filled(n, n, true),
        }
    }

    pub fn len(&self) -> usize {
        self.mask.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.rows() == 0
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix<bool> {
        &self.mask
    }
}

fn point_on_ring_boundary(p: (Scalar, Scalar), poly: &Polygon) -> bool {
    let n = poly.vertices.len();
    for i in 0..n {
        let a = poly.vertices[i];
        let b = poly.vertices[(i + 1) % n];
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if cross.abs() < 1e-9
            && p.0 >= a.0.min(b.0) - 1e-9
            && p.0 <= a.0.max(b.0) + 1e-9
            && p.1 >= a.1.min(b.1) - 1e-9
            && p.1 <= a.1.max(b.1) + 1e-9
        {
            return true;
        }
    }
    false
}

/// Winding-number point-in-polygon test, boundary inclusive.
pub fn point_in_polygon(p: (Scalar, Scalar), poly: &Polygon) -> bool {
    if point_on_ring_boundary(p, poly) {
        return true;
    }
    let n = poly.vertices.len();
    let mut winding = 0i32;
    for i in 0..n {
        let a = poly.vertices[i];
        let b = poly.vertices[(i + 1) % n];
        let is_left = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if a.1 <= p.1 {
            if b.1 > p.1 && is_left > 0.0 {
                winding += 1;
            }
        } else if b.1 <= p.1 && is_left < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// Zone containing the box anchor (bottom-center); the lowest label wins when
/// several polygons contain it.
pub fn assign_zone(bbox: &BBox, zones: &[Polygon; 4]) -> Option<u8> {
    let anchor = bbox.anchor();
    for (idx, poly) in zones.iter().enumerate() {
        if point_in_polygon(anchor, poly) {
            return Some(idx as u8 + 1);
        }
    }
    None
}

/// Start/end zone and time of a tracklet.
///
/// The start zone comes from the earliest observation that falls inside any
/// zone, the end zone from the latest such observation; times always span the
/// whole tracklet. Returns `None` when no observation is zoned.
pub fn compute_endpoints(tracklet: &Tracklet, zone_map: &ZoneMap) -> Option<TrackletEndpoints> {
    let zones = zone_map.zones(tracklet.camera_id)?;
    let mut z_s = None;
    let mut z_e = None;
    for obs in &tracklet.observations {
        if let Some(z) = assign_zone(&obs.bbox, zones) {
            if z_s.is_none() {
                z_s = Some(z);
            }
            z_e = Some(z);
        }
    }
    match (z_s, z_e, tracklet.observations.first(), tracklet.observations.last()) {
        (Some(z_s), Some(z_e), Some(first), Some(last)) => Some(TrackletEndpoints {
            z_s,
            z_e,
            t_s: first.t,
            t_e: last.t,
        }),
        _ => None,
    }
}

/// Attach endpoints to every tracklet in place.
pub fn annotate_endpoints(tracklets: &mut [Tracklet], zone_map: &ZoneMap) {
    for t in tracklets.iter_mut() {
        t.endpoints = compute_endpoints(t, zone_map);
    }
}

/// Tracklet filter strategy: drop tracklets that never change zone, tracklets
/// that only cross the side road (zones 1 <-> 2) and tracklets that never
/// touch any zone.
pub fn tfs_filter(tracklets: Vec<Tracklet>) -> Vec<Tracklet> {
    tracklets
        .into_iter()
        .filter(|t| match &t.endpoints {
            None => false,
            Some(e) => {
                if e.z_s == e.z_e {
                    return false;
                }
                let pair = (e.z_s.min(e.z_e), e.z_s.max(e.z_e));
                pair != (1, 2)
            }
        })
        .collect()
}

/// Endpoint view used by the conflict table: camera position along the
/// topology plus the tracklet's start/end zones and times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictView {
    pub cam_order: usize,
    pub endpoints: TrackletEndpoints,
}

fn directed_conflict(i: &ConflictView, j: &ConflictView) -> bool {
    let e_i = &i.endpoints;
    let e_j = &j.endpoints;
    let starts_side = e_i.z_s == 1 || e_i.z_s == 2;
    let ends_side = e_i.z_e == 1 || e_i.z_e == 2;
    // Rows of the conflict table for the ordered pair (i, j):
    // a vehicle entering from the side road did not exist on the main road
    // before t_s, one leaving to the side road does not exist after t_e, and
    // a vehicle entering from (or leaving towards) a neighbouring camera
    // cannot be seen on that side at incompatible times.
    (starts_side && e_j.t_e < e_i.t_s)
        || (e_i.z_s == 3 && j.cam_order > i.cam_order && e_j.t_e > e_i.t_s)
        || (e_i.z_s == 4 && j.cam_order < i.cam_order && e_j.t_e > e_i.t_s)
        || (ends_side && e_j.t_s > e_i.t_e)
        || (e_i.z_e == 3 && j.cam_order > i.cam_order && e_j.t_s < e_i.t_e)
        || (e_i.z_e == 4 && j.cam_order < i.cam_order && e_j.t_s < e_i.t_e)
}

/// True when the pair can never be the same vehicle. Both orders of the
/// conflict table are checked, so the relation is symmetric. Same-camera
/// pairs are not judged here (the clustering stage forbids them outright).
pub fn conflict(i: &ConflictView, j: &ConflictView) -> bool {
    if i.cam_order == j.cam_order {
        return false;
    }
    directed_conflict(i, j) || directed_conflict(j, i)
}

/// Build the DBTM matrix for the given tracklets.
///
/// Tracklets without endpoints cannot be judged by the conflict table and stay
/// compatible with everything.
pub fn build_dbtm(tracklets: &[Tracklet], topology: &CameraTopology) -> Result<DbtmMatrix> {
    let views: Vec<Option<ConflictView>> = tracklets
        .iter()
        .map(|t| -> Result<Option<ConflictView>> {
            let Some(endpoints) = t.endpoints else {
                return Ok(None);
            };
            let cam_order = topology.index_of(t.camera_id).ok_or_else(|| {
                Error::Config(format!("camera {} not present in topology", t.camera_id))
            })?;
            Ok(Some(ConflictView {
                cam_order,
                endpoints,
            }))
        })
        .collect::<Result<_>>()?;

    let n = tracklets.len();
    let mut mask = Matrix::filled(n, n, true);
    for a in 0..n {
        for b in (a + 1)..n {
            if let (Some(va), Some(vb)) = (&views[a], &views[b]) {
                if conflict(va, vb) {
                    mask[(a, b)] = false;
                    mask[(b, a)] = false;
                }
            }
        }
    }
    Ok(DbtmMatrix { mask })
}
