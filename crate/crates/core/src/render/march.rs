//! Fused ray marching through a [`VoxelGrid`] with a replayable trace for
//! the backward pass.

use rayon::prelude::*;

use crate::field::grid::{radiance_raw, Trilinear, VoxelGrid, PAYLOAD_LEN, SIGMA_SLOT};
use crate::field::sh::{sh_basis_unchecked, ShBasis, SH_COEFFS};
use crate::io::image::ImageBuffer;
use crate::render::camera::{Camera, Ray};
use crate::render::composite::sample_count;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Sample spacing along the ray, world units.
    pub step: f64,
    /// Constant added to the SH sum before the radiance floor.
    pub color_offset: f64,
    /// Marching stops once transmittance falls below this value.
    pub t_cutoff: f64,
    /// Test hook: negates the sigma adjoint.
    #[doc(hidden)]
    pub flip_sigma_adjoint: bool,
}

impl RenderOptions {
    /// Half the smallest voxel edge.
    pub fn for_grid(grid: &VoxelGrid) -> Self {
        let v = grid.voxel_size();
        RenderOptions {
            step: 0.5 * v[0].min(v[1]).min(v[2]),
            color_offset: crate::field::DEFAULT_COLOR_OFFSET,
            t_cutoff: 1e-5,
            flip_sigma_adjoint: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TraceSample {
    tri: Trilinear,
    sigma: f64,
    raw: [f64; 3],
    transmittance: f64,
    keep: f64,
    weight: f64,
}

/// Per-ray record of the samples that contributed, reused across rays.
#[derive(Debug, Default, Clone)]
pub struct RayTrace {
    basis: ShBasis,
    samples: Vec<TraceSample>,
    rgb: [f64; 3],
}

impl RayTrace {
    pub fn rgb(&self) -> [f64; 3] {
        self.rgb
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Calls `f` with every grid vertex that received nonzero interpolation
    /// weight from a recorded sample (with repetitions).
    pub fn for_each_vertex(&self, mut f: impl FnMut(usize)) {
        for s in &self.samples {
            for (&i, &w) in s.tri.indices.iter().zip(&s.tri.weights) {
                if w > 0.0 {
                    f(i);
                }
            }
        }
    }

    /// Sum of compositing weights, `1 - T_final`.
    pub fn opacity(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }
}

/// Marches `ray` and records the contributing samples into `trace`.
pub fn trace_ray(grid: &VoxelGrid, ray: &Ray, opts: &RenderOptions, trace: &mut RayTrace) -> [f64; 3] {
    trace.samples.clear();
    trace.basis = sh_basis_unchecked(ray.dir);
    let n = sample_count(ray, opts.step);
    let delta = opts.step;
    let mut depth = 0.0f64;
    let mut transmittance = 1.0f64;
    let mut rgb = [0.0; 3];
    let mut payload = [0.0; PAYLOAD_LEN];
    for i in 0..n {
        if transmittance < opts.t_cutoff {
            break;
        }
        let pos = ray.at(ray.t_near + (i as f64 + 0.5) * delta);
        let tri = grid.trilinear_clamped(pos);
        if grid.stencil_empty(&tri) {
            continue;
        }
        let sigma = grid.blend_sigma(&tri);
        if sigma < 0.0 {
            continue;
        }
        grid.blend(&tri, &mut payload);
        let raw = radiance_raw(&payload, &trace.basis, opts.color_offset);
        let keep = (-sigma * delta).exp();
        let weight = transmittance * (1.0 - keep);
        for c in 0..3 {
            rgb[c] += weight * raw[c].max(0.0);
        }
        trace.samples.push(TraceSample {
            tri,
            sigma,
            raw,
            transmittance,
            keep,
            weight,
        });
        depth += sigma * delta;
        transmittance = (-depth).exp();
    }
    trace.rgb = rgb;
    rgb
}

/// Forward-only march.
pub fn render_ray(grid: &VoxelGrid, ray: &Ray, opts: &RenderOptions) -> [f64; 3] {
    let mut trace = RayTrace::default();
    trace_ray(grid, ray, opts, &mut trace)
}

/// Accumulates `∂L/∂payload` into `grad` (flat, grid layout) given
/// `d_rgb = ∂L/∂Ĉ` for a traced ray.
pub fn backward_ray(
    grid: &VoxelGrid,
    trace: &RayTrace,
    d_rgb: [f64; 3],
    opts: &RenderOptions,
    grad: &mut [f64],
) {
    let dot = |c: [f64; 3]| d_rgb[0] * c[0] + d_rgb[1] * c[1] + d_rgb[2] * c[2];
    let total = dot(trace.rgb);
    let delta = opts.step;
    let mut prefix = 0.0;
    let mut d_payload = [0.0; PAYLOAD_LEN];
    for s in &trace.samples {
        let color = [s.raw[0].max(0.0), s.raw[1].max(0.0), s.raw[2].max(0.0)];
        let gc = dot(color);
        prefix += s.weight * gc;
        let mut d_sigma = delta * (s.transmittance * s.keep * gc - (total - prefix));
        if opts.flip_sigma_adjoint {
            d_sigma = -d_sigma;
        }
        for c in 0..3 {
            let d_c = if s.raw[c] >= 0.0 { s.weight * d_rgb[c] } else { 0.0 };
            for k in 0..SH_COEFFS {
                d_payload[c * SH_COEFFS + k] = d_c * trace.basis[k];
            }
        }
        d_payload[SIGMA_SLOT] = if s.sigma >= 0.0 { d_sigma } else { 0.0 };
        grid.scatter(&s.tri, &d_payload, grad);
    }
}

/// HDR values `Ĉ(r)` for the given pixels.
pub fn render_hdr(
    grid: &VoxelGrid,
    cam: &Camera,
    pixels: &[(u32, u32)],
    opts: &RenderOptions,
) -> Vec<[f64; 3]> {
    let bounds = grid.bounds();
    pixels
        .par_iter()
        .map_init(RayTrace::default, |trace, &(px, py)| {
            let ray = cam.generate_ray(px as f64, py as f64, &bounds);
            trace_ray(grid, &ray, opts, trace)
        })
        .collect()
}

/// Full-frame HDR render.
pub fn render_image(grid: &VoxelGrid, cam: &Camera, opts: &RenderOptions) -> ImageBuffer {
    let pixels: Vec<(u32, u32)> = (0..cam.height)
        .flat_map(|y| (0..cam.width).map(move |x| (x, y)))
        .collect();
    let values = render_hdr(grid, cam, &pixels, opts);
    ImageBuffer::from_pixels(cam.width, cam.height, &values)
}
