// SPDX-License-Identifier: Apache-2.0

//! Masked scene contrast for scene-level point clouds.
//!
//! The crate covers the whole desk-scale pre-training stack: synthetic scenes
//! and point-cloud I/O, the stochastic view-generation pipeline, point
//! correspondence in the original (pre-spatial-augmentation) frame,
//! contrastive cross masks, surfel normal estimation, the InfoNCE / color /
//! normal objectives with analytic gradients, and a small hand-differentiated
//! encoder with a training loop.

pub mod augment;
pub mod bench;
pub mod cloud;
pub mod config;
pub mod correspond;
pub mod error;
pub mod flat;
pub mod geom;
pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod maskgen;
pub mod objective;
pub mod rng;
pub mod surfel;
pub mod synth;
pub mod toytrain;
pub mod viewgen;

pub use cloud::PointCloud;
pub use error::{MscError, Result};
pub use rng::Rng;
