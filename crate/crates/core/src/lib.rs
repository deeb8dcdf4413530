//! Partial-policy actor-critic reinforcement learning for point-landmark
//! localization in 3D scalar volumes.
//!
//! An agent walks a volume one voxel step at a time. Instead of a single
//! policy over the six axis-aligned moves, three two-way *partial* policies
//! (one per Cartesian axis) are deployed in a fixed x, y, z rotation, each
//! with its own critic, all sharing one convolutional trunk.
//!
//! Module map:
//!
//! - [`volume`]: volumes, synthetic data, the volume file format and
//!   tri-planar observation extraction.
//! - [`mdp`]: actions, partial action spaces, transition and reward.
//! - [`approximator`]: the convolutional actor-critic network, its
//!   gradients and checkpoints.
//! - [`replay`]: per-axis experience replay.
//! - [`learner`]: episode collection, TD(0) quantities and training for the
//!   partial-policy, single-policy actor-critic and Q-learning modes.
//! - [`tabular`]: lookup-table partial actor-critic for small volumes.
//! - [`localizer`]: greedy inference walks and evaluation reports.
//! - [`config`]: the JSON run configuration shared by the command line tool.

pub mod approximator;
pub mod config;
pub mod error;
pub mod learner;
pub mod localizer;
pub mod mdp;
pub mod replay;
pub mod tabular;
pub mod volume;

pub use error::{Error, Result};
