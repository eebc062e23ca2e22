//! Binary grid checkpoint.
//!
//! Layout (little-endian): magic `HVXF`, version `u32`, resolution `3 × u32`,
//! bounds `6 × f64` (min xyz then max xyz), then `28 × f32` per vertex in
//! x-fastest order, then one occupancy byte per vertex. Version 2 is
//! identical except that payloads are stored as `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::field::grid::{VoxelGrid, PAYLOAD_LEN};
use crate::math::Aabb;
use crate::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"HVXF";
pub const GRID_VERSION: u32 = 1;
pub const GRID_VERSION_F64: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

pub fn write_grid<W: Write>(grid: &VoxelGrid, w: &mut W) -> std::io::Result<()> {
    write_grid_with(grid, Precision::F32, w)
}

pub fn write_grid_with<W: Write>(grid: &VoxelGrid, precision: Precision, w: &mut W) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(64 + grid.data().len() * 8 + grid.vertex_count());
    buf.extend_from_slice(GRID_MAGIC);
    let version = match precision {
        Precision::F32 => GRID_VERSION,
        Precision::F64 => GRID_VERSION_F64,
    };
    buf.extend_from_slice(&version.to_le_bytes());
    for r in grid.resolution() {
        buf.extend_from_slice(&(r as u32).to_le_bytes());
    }
    let b = grid.bounds();
    for v in b.min.iter().chain(&b.max) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in grid.data() {
        match precision {
            Precision::F32 => buf.extend_from_slice(&(*v as f32).to_le_bytes()),
            Precision::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    buf.extend(grid.occupancy().iter().map(|&o| o as u8));
    w.write_all(&buf)
}

pub fn read_grid<R: Read>(r: &mut R) -> Result<VoxelGrid> {
    let bad = |d: &str| Error::format("grid checkpoint", d);
    let mut head = [0u8; 4 + 4 + 12 + 48];
    r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[0..4] != GRID_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(head[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != GRID_VERSION && version != GRID_VERSION_F64 {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let res = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    if res.iter().any(|&v| v == 0 || v > 4096) {
        return Err(bad(&format!("implausible resolution {res:?}")));
    }
    let min = [f64_at(20), f64_at(28), f64_at(36)];
    let max = [f64_at(44), f64_at(52), f64_at(60)];
    let bounds = Aabb::new(min, max)?;
    let n = (res[0] + 1) * (res[1] + 1) * (res[2] + 1);
    let width = if version == GRID_VERSION { 4 } else { 8 };
    let mut raw = vec![0u8; n * PAYLOAD_LEN * width];
    r.read_exact(&mut raw).map_err(|_| bad("truncated payloads"))?;
    let data = if width == 4 {
        raw.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    } else {
        raw.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let mut occ = vec![0u8; n];
    r.read_exact(&mut occ).map_err(|_| bad("truncated occupancy"))?;
    VoxelGrid::from_parts(res, bounds, data, occ.into_iter().map(|b| b != 0).collect())
}

pub fn save_grid(grid: &VoxelGrid, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_grid(grid, &mut f).map_err(|e| Error::io(path, e))
}

pub fn load_grid(path: &Path) -> Result<VoxelGrid> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_grid(&mut std::io::BufReader::new(f))
}
