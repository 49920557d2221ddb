//! Liquid reconstruction from binary surface masks.
//!
//! Particles are optimized so that their soft silhouette matches observed
//! masks while satisfying SPH density and SDF collision constraints. The
//! particle count itself is adjusted by duplicating or removing single
//! particles when the continuous optimization stalls, and particles are
//! carried between frames by a position-based-fluids prediction step.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod branching;
pub mod camera;
pub mod collision;
pub mod config;
pub mod density;
pub mod dynamics;
pub mod error;
pub mod image;
pub mod io;
pub mod kernels;
pub mod neighbors;
pub mod params;
pub mod pipeline;
pub mod reconstruct;
pub mod render;
pub mod sim;
pub mod source;
pub mod state;
pub mod surface;

pub use camera::PinholeCamera;
pub use collision::{GridSpec, SceneNode, VoxelSdf};
pub use error::{Error, Result};
pub use image::{BinaryMask, SoftImage};
pub use params::HyperParams;
pub use render::{LossReport, RenderSettings, View};
pub use state::{ParticleState, Vec3};
