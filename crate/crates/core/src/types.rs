//! Core domain types shared by every pipeline stage.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Real, Scalar};

/// Axis-aligned box in pixel coordinates, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<T = Scalar> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Real> BBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        BBox { x, y, w, h }
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn center(&self) -> (T, T) {
        let two = T::one() + T::one();
        (self.x + self.w / two, self.y + self.h / two)
    }

    /// Bottom-center point; vehicles touch the road plane there, so zone
    /// membership is decided from this anchor.
    pub fn anchor(&self) -> (T, T) {
        let two = T::one() + T::one();
        (self.x + self.w / two, self.y + self.h)
    }

    pub fn is_valid(&self) -> bool {
        self.w > T::zero() && self.h > T::zero()
    }
}

/// Vehicle classes kept after detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Car,
    Truck,
    Bus,
}

impl FromStr for VehicleClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "car" => Ok(VehicleClass::Car),
            "truck" => Ok(VehicleClass::Truck),
            "bus" => Ok(VehicleClass::Bus),
            other => Err(format!("unknown vehicle class `{other}`")),
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VehicleClass::Car => "car",
            VehicleClass::Truck => "truck",
            VehicleClass::Bus => "bus",
        };
        f.write_str(s)
    }
}

/// One camera-frame observation with its appearance embedding.
///
/// `feature` is L2-normalized at ingestion; `feature_index` is the 0-based row
/// of this detection in the ingested detection/feature files, so tracklet dumps
/// can reference embeddings without duplicating them.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub camera_id: u32,
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: Scalar,
    pub class: VehicleClass,
    pub feature: Vec<Scalar>,
    pub feature_index: usize,
}

/// `(t, b, f)` triple inside a tracklet.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletObservation {
    pub t: u32,
    pub bbox: BBox,
    pub feature: Vec<Scalar>,
    pub feature_index: usize,
}

/// Start/end zone labels and times of a tracklet under its camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackletEndpoints {
    pub z_s: u8,
    pub z_e: u8,
    pub t_s: u32,
    pub t_e: u32,
}

/// Per-camera track fragment: ordered observations plus derived endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub camera_id: u32,
    pub local_id: u32,
    pub observations: Vec<TrackletObservation>,
    /// Filled by the zones stage; `None` until computed or when no
    /// observation falls inside any zone.
    pub endpoints: Option<TrackletEndpoints>,
}

impl Tracklet {
    pub fn start_time(&self) -> u32 {
        self.observations.first().map(|o| o.t).unwrap_or(0)
    }

    pub fn end_time(&self) -> u32 {
        self.observations.last().map(|o| o.t).unwrap_or(0)
    }

    /// Observations must strictly increase in time.
    pub fn times_strictly_increasing(&self) -> bool {
        self.observations.windows(2).all(|w| w[0].t < w[1].t)
    }
}

/// Ordered camera chain along the main road. Index order is driving order;
/// the "next" camera is the one with the higher index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraTopology {
    order: Vec<u32>,
}

impl CameraTopology {
    pub fn new(order: Vec<u32>) -> crate::Result<Self> {
        if order.is_empty() {
            return Err(crate::Error::Config("topology must list at least one camera".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &order {
            if !seen.insert(*id) {
                return Err(crate::Error::Config(format!(
                    "camera {id} listed twice in topology"
                )));
            }
        }
        Ok(CameraTopology { order })
    }

    pub fn cameras(&self) -> &[u32] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Position of a camera along the main road.
    pub fn index_of(&self, camera_id: u32) -> Option<usize> {
        self.order.iter().position(|&c| c == camera_id)
    }
}

/// Simple polygon in pixel coordinates, stored as an open ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<(Scalar, Scalar)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(Scalar, Scalar)>) -> Self {
        Polygon { vertices }
    }
}

/// Per-camera zone polygons, labels 1-4.
///
/// Zones 1 and 2 cross the main road, zone 3 faces the next camera in the
/// topology and zone 4 the previous one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZoneMap {
    cameras: BTreeMap<u32, [Polygon; 4]>,
}

impl ZoneMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, camera_id: u32, zones: [Polygon; 4]) {
        self.cameras.insert(camera_id, zones);
    }

    /// Zone polygons for a camera, indexed `label - 1`.
    pub fn zones(&self, camera_id: u32) -> Option<&[Polygon; 4]> {
        self.cameras.get(&camera_id)
    }

    pub fn polygon(&self, camera_id: u32, label: u8) -> Option<&Polygon> {
        if !(1..=4).contains(&label) {
            return None;
        }
        self.cameras.get(&camera_id).map(|z| &z[(label - 1) as usize])
    }

    pub fn camera_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.cameras.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// A cross-camera cluster of tracklets sharing one global identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTrajectory {
    pub global_id: u32,
    pub members: Vec<Tracklet>,
}

impl GlobalTrajectory {
    /// Earliest observation time over all members.
    pub fn start_time(&self) -> u32 {
        self.members.iter().map(|t| t.start_time()).min().unwrap_or(0)
    }

    pub fn camera_count(&self) -> usize {
        let mut cams: Vec<u32> = self.members.iter().map(|t| t.camera_id).collect();
        cams.sort_unstable();
        cams.dedup();
        cams.len()
    }
}

/// One identity-labelled box of a trajectory file (submission or ground truth).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub camera_id: u32,
    pub id: u32,
    pub frame: u32,
    pub bbox: BBox,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_area_and_anchor() {
        let b = BBox::new(10.0, 20.0, 30.0, 40.0);
        assert_eq!(b.area(), 1200.0);
        assert_eq!(b.anchor(), (25.0, 60.0));
        assert!(b.is_valid());
        assert!(!BBox::new(0.0, 0.0, 0.0, 5.0).is_valid());
    }

    #[test]
    fn vehicle_class_round_trips() {
        for c in [VehicleClass::Car, VehicleClass::Truck, VehicleClass::Bus] {
            assert_eq!(c.to_string().parse::<VehicleClass>().unwrap(), c);
        }
        assert!("bicycle".parse::<VehicleClass>().is_err());
    }

    #[test]
    fn topology_rejects_duplicates() {
        assert!(CameraTopology::new(vec![41, 42, 41]).is_err());
        assert!(CameraTopology::new(vec![]).is_err());
        let topo = CameraTopology::new(vec![41, 42, 43]).unwrap();
        assert_eq!(topo.index_of(42), Some(1));
        assert_eq!(topo.index_of(99), None);
    }

    #[test]
    fn tracklet_time_ordering() {
        let obs = |t| TrackletObservation {
            t,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            feature: vec![1.0],
            feature_index: 0,
        };
        let tr = Tracklet {
            camera_id: 41,
            local_id: 1,
            observations: vec![obs(1), obs(2), obs(5)],
            endpoints: None,
        };
        assert!(tr.times_strictly_increasing());
        assert_eq!(tr.start_time(), 1);
        assert_eq!(tr.end_time(), 5);
    }
}
