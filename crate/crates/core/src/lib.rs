//! Highway driving with a direct-perception stack: a deterministic multi-lane
//! simulator, the 13 affordance indicators, a reactive controller built on
//! them, a raster renderer, estimators (oracle, noisy, learned), and the
//! evaluation and dataset tooling around them.

pub mod track;

pub use track::{LaneFrame, LaneSection, Pose, Segment, SegmentKind, TrackError, TrackGeometry};

pub mod affordance;
pub mod controller;
pub mod sim;
pub mod render;
mod codec;
pub mod learning;
pub mod perception;
pub mod eval;
pub mod datastore;
pub mod scenario;
pub mod session;
