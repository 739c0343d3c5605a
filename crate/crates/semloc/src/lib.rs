//! Semantic LiDAR localization toolkit.
//!
//! Labels LiDAR scans from segmented camera images (projection) or per-point
//! label files, runs semantic-gated ICP odometry with a GNSS-anchored pose
//! graph, builds class-filtered semantic maps, and evaluates trajectories by
//! absolute trajectory error. A built-in simulator provides ground truth for
//! every stage.

pub mod calib;
pub mod camera;
pub mod cloud;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod mapping;
pub mod odometry;
pub mod pipeline;
pub mod posegraph;
pub mod projection;
pub mod scalar;
pub mod semantics;
pub mod sim;
pub mod sync;
pub mod taxonomy;
pub mod time;

pub use error::{Error, Result};
pub use scalar::Real;
pub use taxonomy::{ClassGroups, RemapTable, UnifiedClass};
pub use time::Timestamp;

/// Concrete scalar aliases. The geometry core is generic over [`Real`];
/// pipeline code uses the f64 forms.
pub type Pose = geometry::Pose<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type CameraModel = camera::CameraModel<f64>;
pub type CameraModel32 = camera::CameraModel<f32>;
pub type Distortion = camera::Distortion<f64>;
