//! Collaborative 3D semantic occupancy prediction with sparse semantic
//! Gaussians as the message exchanged between agents.
//!
//! Each agent describes its surroundings as a set of [`SemanticGaussian`]s.
//! Neighbours rigidly align their primitives into the ego frame, cull them to
//! the ego region of interest and send them as compact [`GaussianMessage`]s.
//! The ego either stacks what it receives or refines its own primitives with
//! the learned neighbourhood [`fusion`] module, then splats everything into a
//! semantic voxel grid.

pub mod classes;
pub mod comms;
pub mod error;
pub mod fusion;
pub mod gaussian;
pub mod geometry;
pub mod grid;
pub mod learn;
pub mod metrics;
pub mod sim;
pub mod splat;

pub use classes::{SemanticClass, EMPTY_CLASS, NUM_CLASSES};
pub use comms::{CommStats, GaussianMessage, Precision};
pub use error::{DecodeError, Error, Result};
pub use fusion::{FusionConfig, FusionParams, Pooling};
pub use gaussian::{SemanticGaussian, Semantics};
pub use geometry::{Mat3, Quat, RigidTransform, Roi, Vec3};
pub use grid::{ChannelGrid, GridGeometry, LabelGrid, VoxelGrid};
pub use metrics::EvalReport;
pub use sim::{Mode, ObservationModel, SceneSpec};
pub use splat::SplatConfig;
