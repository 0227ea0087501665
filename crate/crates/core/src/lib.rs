//! Navigation planning on georeferenced aerial imagery.
//!
//! The crate turns a bird's-eye-view (BEV) orthomosaic and a binary
//! traversability mask into an executable global path, keeps that path usable
//! while local odometry drifts, and provides the metrics used to benchmark
//! traversability priors.
//!
//! Pipeline, top to bottom:
//!
//! * [`bev_map`] loads the raster and its world-file georeference.
//! * [`generation`] talks to an image-generation backend: it marks the start
//!   on the map, fetches the traversability mask and locates the generated
//!   goal marker.
//! * [`traversability`] binarizes and cleans masks and computes the exact
//!   Euclidean distance field the planner penalizes.
//! * [`planner`] runs boundary-penalized A* and emits a map-frame path.
//! * [`executor`] aligns the map frame with a drifting odometry frame and
//!   simulates lookahead tracking with periodic global fixes.
//! * [`benchmark`] implements segmentation metrics and the start/goal
//!   path-planning benchmark.

pub mod benchmark;
pub mod bev_map;
pub mod executor;
pub mod generation;
mod io;
pub mod planner;
pub mod render;
pub mod synthetic;
pub mod traversability;

pub use bev_map::{Affine, BevMap, Cell, PixelCoord, WorldCoord};
pub use executor::{Frame, Pose2D, RigidTransform2D, SimConfig};
pub use planner::{CostParams, PathM, PlanError};
pub use traversability::{DistanceField, ThresholdRule, TraversabilityMask};

pub use io::{encode_png, write_atomic};
