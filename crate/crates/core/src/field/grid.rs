use crate::field::sh::{ShBasis, SH_COEFFS};
use crate::math::{Aabb, Vec3};
use crate::{Error, Result};

/// Scalars stored per vertex: 3 × 9 SH coefficients followed by sigma.
pub const PAYLOAD_LEN: usize = 3 * SH_COEFFS + 1;
pub const SIGMA_SLOT: usize = 3 * SH_COEFFS;

/// Grey offset added to the SH sum before the radiance floor.
pub const DEFAULT_COLOR_OFFSET: f64 = 0.5;
pub const INIT_SIGMA: f64 = 0.1;

#[inline]
pub const fn sh_slot(channel: usize, k: usize) -> usize {
    channel * SH_COEFFS + k
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexPayload {
    pub sh: [[f64; SH_COEFFS]; 3],
    pub sigma: f64,
}

impl VertexPayload {
    pub const ZERO: VertexPayload = VertexPayload {
        sh: [[0.0; SH_COEFFS]; 3],
        sigma: 0.0,
    };

    pub fn from_slice(s: &[f64]) -> Self {
        let mut p = VertexPayload::ZERO;
        for c in 0..3 {
            p.sh[c].copy_from_slice(&s[c * SH_COEFFS..(c + 1) * SH_COEFFS]);
        }
        p.sigma = s[SIGMA_SLOT];
        p
    }

    pub fn to_array(&self) -> [f64; PAYLOAD_LEN] {
        let mut out = [0.0; PAYLOAD_LEN];
        for c in 0..3 {
            out[c * SH_COEFFS..(c + 1) * SH_COEFFS].copy_from_slice(&self.sh[c]);
        }
        out[SIGMA_SLOT] = self.sigma;
        out
    }
}

/// The eight corners of the cell enclosing a point and their trilinear
/// weights. Corner `c` has offsets `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trilinear {
    pub indices: [usize; 8],
    pub weights: [f64; 8],
}

/// Dense-indexed sparse voxel grid. Vertices are stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    res: [usize; 3],
    bounds: Aabb,
    data: Vec<f64>,
    occupied: Vec<bool>,
}

impl VoxelGrid {
    /// Fresh grid: zero SH (grey through the colour offset), sigma 0.1, all
    /// vertices occupied.
    pub fn init(res: [usize; 3], bounds: Aabb) -> Result<Self> {
        Self::filled(res, bounds, &VertexPayload {
            sigma: INIT_SIGMA,
            ..VertexPayload::ZERO
        })
    }

    pub fn filled(res: [usize; 3], bounds: Aabb, payload: &VertexPayload) -> Result<Self> {
        if res.iter().any(|&r| r == 0) {
            return Err(Error::invalid(format!("grid resolution must be positive, got {res:?}")));
        }
        let bounds = Aabb::new(bounds.min, bounds.max)?;
        let n = (res[0] + 1) * (res[1] + 1) * (res[2] + 1);
        let proto = payload.to_array();
        let mut data = Vec::with_capacity(n * PAYLOAD_LEN);
        for _ in 0..n {
            data.extend_from_slice(&proto);
        }
        Ok(VoxelGrid {
            res,
            bounds,
            data,
            occupied: vec![true; n],
        })
    }

    pub(crate) fn from_parts(
        res: [usize; 3],
        bounds: Aabb,
        data: Vec<f64>,
        occupied: Vec<bool>,
    ) -> Result<Self> {
        if res.iter().any(|&r| r == 0) {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        let bounds = Aabb::new(bounds.min, bounds.max)?;
        let n = (res[0] + 1) * (res[1] + 1) * (res[2] + 1);
        if data.len() != n * PAYLOAD_LEN || occupied.len() != n {
            return Err(Error::invalid("payload or occupancy length does not match resolution"));
        }
        Ok(VoxelGrid {
            res,
            bounds,
            data,
            occupied,
        })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.res
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn vertex_dims(&self) -> [usize; 3] {
        [self.res[0] + 1, self.res[1] + 1, self.res[2] + 1]
    }

    pub fn vertex_count(&self) -> usize {
        self.occupied.len()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// Edge length of one cell along each axis.
    pub fn voxel_size(&self) -> Vec3 {
        let e = self.bounds.extent();
        [
            e[0] / self.res[0] as f64,
            e[1] / self.res[1] as f64,
            e[2] / self.res[2] as f64,
        ]
    }

    #[inline]
    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        let d = self.vertex_dims();
        i + d[0] * (j + d[1] * k)
    }

    pub fn vertex_coords(&self, idx: usize) -> [usize; 3] {
        let d = self.vertex_dims();
        [idx % d[0], (idx / d[0]) % d[1], idx / (d[0] * d[1])]
    }

    pub fn vertex_position(&self, idx: usize) -> Vec3 {
        let c = self.vertex_coords(idx);
        let v = self.voxel_size();
        [
            self.bounds.min[0] + c[0] as f64 * v[0],
            self.bounds.min[1] + c[1] as f64 * v[1],
            self.bounds.min[2] + c[2] as f64 * v[2],
        ]
    }

    #[inline]
    pub fn payload(&self, idx: usize) -> &[f64] {
        &self.data[idx * PAYLOAD_LEN..(idx + 1) * PAYLOAD_LEN]
    }

    #[inline]
    pub fn payload_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * PAYLOAD_LEN..(idx + 1) * PAYLOAD_LEN]
    }

    pub fn vertex(&self, idx: usize) -> VertexPayload {
        VertexPayload::from_slice(self.payload(idx))
    }

    pub fn set_vertex(&mut self, idx: usize, p: &VertexPayload) {
        self.payload_mut(idx).copy_from_slice(&p.to_array());
    }

    /// Flat parameter vector, `PAYLOAD_LEN` scalars per vertex.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    #[inline]
    pub fn is_occupied(&self, idx: usize) -> bool {
        self.occupied[idx]
    }

    pub fn set_occupied(&mut self, idx: usize, occupied: bool) {
        self.occupied[idx] = occupied;
    }

    /// Sigma as seen by interpolation (zero when unoccupied).
    #[inline]
    pub fn effective_sigma(&self, idx: usize) -> f64 {
        if self.occupied[idx] {
            self.data[idx * PAYLOAD_LEN + SIGMA_SLOT]
        } else {
            0.0
        }
    }

    pub fn trilinear_weights(&self, pos: Vec3) -> Result<Trilinear> {
        if !pos.iter().all(|v| v.is_finite()) || !self.bounds.contains(pos) {
            return Err(Error::OutOfBounds { pos });
        }
        Ok(self.trilinear_clamped(pos))
    }

    /// Trilinear stencil for a point, clamping it into the bounds first.
    #[inline]
    pub(crate) fn trilinear_clamped(&self, pos: Vec3) -> Trilinear {
        let u: Vec3 = std::array::from_fn(|a| {
            (pos[a] - self.bounds.min[a]) / (self.bounds.max[a] - self.bounds.min[a]) * self.res[a] as f64
        });
        self.trilinear_lattice(u)
    }

    /// Stencil for continuous lattice coordinates (vertex `i` sits at `i`).
    #[inline]
    fn trilinear_lattice(&self, u: Vec3) -> Trilinear {
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.res[a];
            let u = u[a].clamp(0.0, n as f64);
            let c = (u.floor() as usize).min(n - 1);
            cell[a] = c;
            frac[a] = u - c as f64;
        }
        let d = self.vertex_dims();
        let base = cell[0] + d[0] * (cell[1] + d[1] * cell[2]);
        let sx = 1;
        let sy = d[0];
        let sz = d[0] * d[1];
        let [fx, fy, fz] = frac;
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        Trilinear {
            indices: [
                base,
                base + sx,
                base + sy,
                base + sx + sy,
                base + sz,
                base + sx + sz,
                base + sy + sz,
                base + sx + sy + sz,
            ],
            weights: [
                gx * gy * gz,
                fx * gy * gz,
                gx * fy * gz,
                fx * fy * gz,
                gx * gy * fz,
                fx * gy * fz,
                gx * fy * fz,
                fx * fy * fz,
            ],
        }
    }

    /// True when every corner of the stencil is unoccupied.
    #[inline]
    pub(crate) fn stencil_empty(&self, t: &Trilinear) -> bool {
        t.indices.iter().all(|&i| !self.occupied[i])
    }

    /// Blends the eight corner payloads into `out`; unoccupied corners read
    /// as zero.
    #[inline]
    pub(crate) fn blend(&self, t: &Trilinear, out: &mut [f64; PAYLOAD_LEN]) {
        *out = [0.0; PAYLOAD_LEN];
        for c in 0..8 {
            let idx = t.indices[c];
            let w = t.weights[c];
            if w == 0.0 || !self.occupied[idx] {
                continue;
            }
            let p = &self.data[idx * PAYLOAD_LEN..(idx + 1) * PAYLOAD_LEN];
            for (o, v) in out.iter_mut().zip(p) {
                *o += w * v;
            }
        }
    }

    /// Blends only the sigma slot.
    #[inline]
    pub(crate) fn blend_sigma(&self, t: &Trilinear) -> f64 {
        let mut s = 0.0;
        for c in 0..8 {
            s += t.weights[c] * self.effective_sigma(t.indices[c]);
        }
        s
    }

    pub fn interp_payload(&self, pos: Vec3) -> Result<VertexPayload> {
        let t = self.trilinear_weights(pos)?;
        let mut out = [0.0; PAYLOAD_LEN];
        self.blend(&t, &mut out);
        Ok(VertexPayload::from_slice(&out))
    }

    /// Adjoint of [`blend`](Self::blend): scatters `d_payload` into the
    /// flat gradient buffer of occupied corners.
    #[inline]
    pub(crate) fn scatter(&self, t: &Trilinear, d_payload: &[f64; PAYLOAD_LEN], grad: &mut [f64]) {
        for c in 0..8 {
            let idx = t.indices[c];
            let w = t.weights[c];
            if w == 0.0 || !self.occupied[idx] {
                continue;
            }
            let g = &mut grad[idx * PAYLOAD_LEN..(idx + 1) * PAYLOAD_LEN];
            for (gi, d) in g.iter_mut().zip(d_payload) {
                *gi += w * d;
            }
        }
    }

    /// Resamples the field onto a finer lattice over the same bounds.
    pub fn upsample(&self, new_res: [usize; 3]) -> Result<VoxelGrid> {
        if (0..3).any(|a| new_res[a] < self.res[a]) {
            return Err(Error::invalid(format!(
                "upsample cannot shrink resolution {:?} to {new_res:?}",
                self.res
            )));
        }
        let mut out = VoxelGrid::filled(new_res, self.bounds, &VertexPayload::ZERO)?;
        let mut buf = [0.0; PAYLOAD_LEN];
        for idx in 0..out.vertex_count() {
            // Exact rational lattice coordinates: coincident vertices copy.
            let ijk = out.vertex_coords(idx);
            let t = self.trilinear_lattice(std::array::from_fn(|a| {
                (ijk[a] * self.res[a]) as f64 / new_res[a] as f64
            }));
            self.blend(&t, &mut buf);
            out.payload_mut(idx).copy_from_slice(&buf);
            out.occupied[idx] = t
                .indices
                .iter()
                .zip(&t.weights)
                .any(|(&i, &w)| w > 0.0 && self.occupied[i]);
        }
        Ok(out)
    }

    /// Marks a vertex unoccupied when every vertex of its 3×3×3
    /// neighbourhood (the corners of all incident cells, itself included)
    /// has sigma below `tau`. Payloads of pruned vertices are kept.
    pub fn prune(&self, tau: f64) -> Result<VoxelGrid> {
        if !(tau >= 0.0) {
            return Err(Error::invalid(format!("prune threshold must be >= 0, got {tau}")));
        }
        let d = self.vertex_dims();
        let low: Vec<bool> = (0..self.vertex_count())
            .map(|i| self.effective_sigma(i) < tau)
            .collect();
        let mut out = self.clone();
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let idx = self.vertex_index(i, j, k);
                    if !self.occupied[idx] || !low[idx] {
                        continue;
                    }
                    let mut all_low = true;
                    'scan: for kk in k.saturating_sub(1)..=(k + 1).min(d[2] - 1) {
                        for jj in j.saturating_sub(1)..=(j + 1).min(d[1] - 1) {
                            for ii in i.saturating_sub(1)..=(i + 1).min(d[0] - 1) {
                                if !low[self.vertex_index(ii, jj, kk)] {
                                    all_low = false;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    if all_low {
                        out.occupied[idx] = false;
                    }
                }
            }
        }
        Ok(out)
    }

    /// True when every stored scalar is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Radiance of an interpolated payload seen along `dir`:
/// `max(0, offset + Σ_k sh[c][k]·Y_k(dir))` per channel.
pub fn eval_radiance(payload: &VertexPayload, dir: Vec3) -> Result<[f64; 3]> {
    eval_radiance_with_offset(payload, dir, DEFAULT_COLOR_OFFSET)
}

pub fn eval_radiance_with_offset(
    payload: &VertexPayload,
    dir: Vec3,
    offset: f64,
) -> Result<[f64; 3]> {
    let basis = crate::field::sh::eval_sh_basis(dir)?;
    let raw = radiance_raw(&payload.to_array(), &basis, offset);
    Ok([raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)])
}

/// Pre-floor radiance from a flat payload.
#[inline]
pub(crate) fn radiance_raw(payload: &[f64; PAYLOAD_LEN], basis: &ShBasis, offset: f64) -> [f64; 3] {
    let mut out = [offset; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let sh = &payload[c * SH_COEFFS..(c + 1) * SH_COEFFS];
        for k in 0..SH_COEFFS {
            *o += sh[k] * basis[k];
        }
    }
    out
}
