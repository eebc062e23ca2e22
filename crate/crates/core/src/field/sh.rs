//! Real spherical harmonics up to band l = 2.
//!
//! Coefficient order and signs follow the table used by most voxel and
//! splatting radiance-field codebases:
//!
//! | index | (l, m)  | value                      |
//! |-------|---------|----------------------------|
//! | 0     | (0, 0)  | C0                         |
//! | 1     | (1, -1) | -C1 · y                    |
//! | 2     | (1, 0)  |  C1 · z                    |
//! | 3     | (1, 1)  | -C1 · x                    |
//! | 4     | (2, -2) |  C2[0] · xy                |
//! | 5     | (2, -1) |  C2[1] · yz                |
//! | 6     | (2, 0)  |  C2[2] · (2z² - x² - y²)   |
//! | 7     | (2, 1)  |  C2[3] · xz                |
//! | 8     | (2, 2)  |  C2[4] · (x² - y²)         |

use crate::math::Vec3;
use crate::{Error, Result};

pub const SH_COEFFS: usize = 9;

pub const C0: f64 = 0.282_094_791_773_878_14;
pub const C1: f64 = 0.488_602_511_902_919_9;
pub const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

/// Band (degree `l`) of each coefficient index.
pub const BAND_OF: [usize; SH_COEFFS] = [0, 1, 1, 1, 2, 2, 2, 2, 2];

pub type ShBasis = [f64; SH_COEFFS];

/// Evaluates the nine basis functions for a unit direction.
pub fn eval_sh_basis(dir: Vec3) -> Result<ShBasis> {
    let n2 = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
    if !n2.is_finite() || (n2.sqrt() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "SH direction must be unit length, got {dir:?}"
        )));
    }
    Ok(sh_basis_unchecked(dir))
}

#[inline]
pub(crate) fn sh_basis_unchecked(dir: Vec3) -> ShBasis {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * x * y,
        C2[1] * y * z,
        C2[2] * (2.0 * zz - xx - yy),
        C2[3] * x * z,
        C2[4] * (xx - yy),
    ]
}
