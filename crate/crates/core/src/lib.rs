//! Cooperative V2X perception: fuse BEV features from vehicles and roadside
//! infrastructure with heterogeneous agent attention and multi-scale window
//! attention, under a simulated lossy, delayed channel.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: tensors, dense maps, softmax, layer norm, bilinear sampling, RNG
//! * [`geometry`]: poses, the delay-correcting feature warp, rotated-box IoU
//! * [`graph`]: typed collaboration graph around the ego vehicle
//! * [`channel`]: compression, delay and pose-noise model of the V2X link
//! * [`hmsa`]: per-cell attention across agents with node/edge-typed weights
//! * [`mswin`]: multi-scale window attention with split-attention fusion
//! * [`model`]: delay encoding, stacked fusion blocks, detection head, losses
//! * [`harness`]: synthetic scenarios, end-to-end pipeline, AP metrics, oracles

pub mod channel;
pub mod error;
pub mod feature;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod hmsa;
pub mod model;
pub mod mswin;
pub mod numerics;

pub use error::{Error, Result};
pub use feature::{AgentId, FeatureMap, GridSpec, RoiMask};
pub use geometry::{BoxBEV, Pose2};
pub use graph::{AgentKind, AgentMeta, EdgeKind, V2XGraph};
pub use numerics::{Dense, SeededRng, Tensor};
