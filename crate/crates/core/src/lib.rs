//! Tongue animation from electromagnetic articulography (EMA) data.
//!
//! The pipeline runs in stages that each live in their own module:
//!
//! - [`ema_io`]: sweep ingestion, head correction, resampling and cleaning.
//! - [`rig`]: the branched bendy-bone skeleton, strut adaptation layer and
//!   B-bone curve evaluation.
//! - [`ik`]: per-frame damped Gauss-Newton inverse kinematics against strut targets.
//! - [`skin`]: mesh I/O, landmark registration, automatic weights and linear blend skinning.
//! - [`nla`]: action segmentation, pose blending and timeline resolution.
//! - [`bake`]: baking actions into per-frame meshes and exporting them.
//! - [`synth`]: a synthetic ground-truth generator used by tests and the CLI.
//!
//! Coordinates are right-handed millimeters with +y anterior (toward the
//! tongue tip) and +z superior.

pub mod bake;
pub mod ema_io;
pub mod error;
pub mod geometry;
pub mod ik;
pub mod nla;
pub mod posefile;
pub mod rig;
pub mod skin;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Mat3, Vec3};
