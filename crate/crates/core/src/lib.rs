//! Offline multi-target multi-camera vehicle tracking guided by crossroad
//! zones.
//!
//! The crate turns per-camera detections with appearance embeddings into
//! cross-camera vehicle trajectories. Processing follows the stage order of
//! the pipeline: single-camera tracking ([`sct`]), zone endpoint computation,
//! tracklet filtering and the direction-based temporal mask ([`zones`]),
//! appearance affinity with k-reciprocal reranking ([`affinity`]),
//! sub-clustering in adjacent cameras ([`scac`]), identity-level evaluation
//! ([`eval`]) and a deterministic synthetic world generator ([`synth`]) used
//! as the test oracle. [`pipeline`] wires the stages together.
//!
//! The numeric kernels are generic over the scalar type; the pipeline and the
//! file formats use the concrete [`Scalar`] alias.

pub mod affinity;
pub mod error;
pub mod eval;
pub mod io;
pub mod numeric;
pub mod pipeline;
pub mod scac;
pub mod sct;
pub mod synth;
pub mod types;
pub mod zones;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the numeric kernels: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + std::iter::Sum + std::fmt::Debug + std::fmt::Display + Default + 'static
{
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + std::iter::Sum
        + std::fmt::Debug
        + std::fmt::Display
        + Default
        + 'static
{
}

/// Concrete scalar used by the pipeline and the on-disk formats.
pub type Scalar = f64;

pub use error::{Error, Result};
pub use types::{
    BBox, CameraTopology, Detection, GlobalTrajectory, Polygon, TrackRecord, Tracklet,
    TrackletEndpoints, TrackletObservation, VehicleClass, ZoneMap,
};
