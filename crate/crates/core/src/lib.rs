//! Self-calibrating HDR radiance fields on a sparse voxel grid.
//!
//! A grid of spherical-harmonic radiance and opacity is ray-marched into HDR
//! pixel values, which per-view white balance and a learnable response curve
//! map to LDR. Everything is differentiated analytically, and
//! [`oracle`] provides synthetic scenes with known radiometry so the
//! recovered parameters can be checked against ground truth.

pub mod error;
pub mod eval;
pub mod field;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod math;
pub mod oracle;
pub mod render;
pub mod tonemap;
pub mod trainer;

pub use error::{Error, Result};
