//! Egocentric spherical spatial memory.
//!
//! The state is an equirectangular image around the agent holding, per
//! pixel, the direction angles, a depth and `n` feature channels, each with
//! a variance. Every step the state is moved by the agent's pose increment,
//! fresh camera frames are scattered onto the sphere, and the two are fused
//! per pixel with a Kalman update.
//!
//! ```no_run
//! use esm_core::{esm_step, EgosphereState, EsmConfig, PoseIncrement};
//!
//! let state = EgosphereState::new(EsmConfig::default()).unwrap();
//! let next = esm_step(&state, &PoseIncrement::zero(), &[]).unwrap();
//! assert_eq!(next.frame_id, 1);
//! ```

// negated comparisons are how NaN gets rejected throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod avoid;
pub mod error;
pub mod fuse;
pub mod geom;
pub mod io;
pub mod scene;
pub mod state;
pub mod warp;

pub use avoid::{avoidance_speed, avoidance_vector, AvoidanceConfig, Exclusion};
pub use error::{EsmError, Result};
pub use fuse::{esm_step, esm_step_traced, quantize_scatter, smooth, Observation};
pub use geom::{Intrinsics, PolarCoord, Pose6, RotVec, SphereGrid, Transform};
pub use scene::{Scene, SceneError};
pub use state::{EgosphereState, EsmConfig, PoseIncrement, ProjectiveFrame, SmoothingMode};
pub use warp::{warp_omni, warp_projective, ScatteredPoints};
