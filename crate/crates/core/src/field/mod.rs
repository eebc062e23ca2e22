//! Sparse voxel radiance field: SH basis, trilinear interpolation, grid
//! initialization, coarse-to-fine upsampling and pruning.

pub mod checkpoint;
pub mod grid;
pub mod sh;

pub use checkpoint::{load_grid, read_grid, save_grid, write_grid, write_grid_with, Precision};
pub use grid::{
    eval_radiance, eval_radiance_with_offset, sh_slot, Trilinear, VertexPayload, VoxelGrid,
    DEFAULT_COLOR_OFFSET, INIT_SIGMA, PAYLOAD_LEN, SIGMA_SLOT,
};
pub use sh::{eval_sh_basis, ShBasis, BAND_OF, SH_COEFFS};

/// Convenience wrapper for [`VoxelGrid::init`].
pub fn init_grid(res: [usize; 3], bounds: crate::math::Aabb) -> crate::Result<VoxelGrid> {
    VoxelGrid::init(res, bounds)
}
