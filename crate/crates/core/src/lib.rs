//! LIDAR-only global localization in a prebuilt 3D map.
//!
//! A bootstrap particle filter scores particles against a sparse, precomputed
//! truncated distance field. The highest-weight particle is periodically
//! handed to an exact multi-resolution branch-and-bound matcher over the
//! bird's-eye view of the map, refined in 3D with GICP, propagated to the
//! current step with scan-to-scan relative poses, and spliced back into the
//! particle set.

pub mod error;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod matcher;
pub mod motion;
pub mod nn_grid;
pub mod pipeline;
pub mod pointcloud;
pub mod rpe;

pub use error::{Error, Result};
pub use filter::{FilterEstimate, ParticleSet, RngStreams};
pub use geometry::{Pose, Transform};
pub use matcher::{MatchPyramid, MatchResult, SearchWindow};
pub use motion::{ProcessNoise, VehicleState};
pub use nn_grid::{DistanceGrid, GridSpec};
pub use pipeline::{Pipeline, PipelineConfig};
pub use pointcloud::{BevCloud, PointCloud};
