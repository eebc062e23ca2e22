//! Camera rig, ground-truth dataset rendering and recovery comparison.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{save_grid, VoxelGrid};
use crate::io::image::{write_pfm, write_png, ImageBuffer};
use crate::io::manifest::{GroundTruthEntry, Intrinsics, ViewEntry, MANIFEST_SCHEMA};
use crate::io::metrics::{crf_rmse, right_half_mask, scale_aligned_psnr};
use crate::io::{Dataset, DatasetManifest, Role};
use crate::math::{self, Aabb};
use crate::oracle::profile::{GtToneProfile, ViewProfile};
use crate::oracle::scene::{build_scene, SceneSpec};
use crate::render::{render_image, Camera, RenderOptions};
use crate::tonemap::{tonemap, ToneMapParams};
use crate::{Error, Result};

pub const PROFILE_FILE: &str = "profile.json";
pub const GT_GRID_FILE: &str = "gt_grid.hvxf";
pub const SCENE_FILE: &str = "scene.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub views: usize,
    pub test_views: usize,
    pub width: u32,
    pub height: u32,
    /// Camera distance from the scene centre in units of the largest
    /// bounds half-extent.
    pub radius: f64,
    pub jitter_deg: f64,
    pub focal: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec {
            views: 20,
            test_views: 4,
            width: 64,
            height: 64,
            radius: 2.5,
            jitter_deg: 30.0,
            focal: 72.0,
        }
    }
}

/// Indices of held-out views: evenly spread, the last of each block.
pub fn test_view_indices(views: usize, test_views: usize) -> Vec<usize> {
    if test_views == 0 {
        return Vec::new();
    }
    let block = (views / test_views).max(1);
    (0..test_views).map(|t| ((t + 1) * block - 1).min(views - 1)).collect()
}

/// Roughly forward-facing cameras looking at the bounds centre from the −z
/// side, with seeded azimuth/elevation jitter.
pub fn camera_rig(bounds: &Aabb, rig: &RigSpec, seed: u64) -> Result<Vec<(Camera, Role)>> {
    if rig.views < 2 || rig.test_views >= rig.views {
        return Err(Error::invalid("rig needs >= 2 views and fewer test views than views"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5249_4721);
    let center = bounds.center();
    let e = bounds.extent();
    let r = rig.radius * 0.5 * e[0].max(e[1]).max(e[2]);
    let tests = test_view_indices(rig.views, rig.test_views);
    let j = rig.jitter_deg.to_radians();
    (0..rig.views)
        .map(|i| {
            let az: f64 = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
            let el: f64 = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
            let eye = math::add(center, [r * el.cos() * az.sin(), r * el.sin(), -r * el.cos() * az.cos()]);
            let cam = Camera::look_at(eye, center, [0.0, 1.0, 0.0], rig.focal, rig.width, rig.height)?;
            let role = if tests.contains(&i) { Role::Test } else { Role::Train };
            Ok((cam, role))
        })
        .collect()
}

pub fn view_id(i: usize) -> String {
    format!("view_{i:02}")
}

/// LDR image of `hdr` through a ground-truth view profile, with the
/// exposure optionally scaled.
pub fn apply_profile(hdr: &ImageBuffer, profile: &ViewProfile, exposure_scale: f64) -> ImageBuffer {
    let scaled = ViewProfile {
        wb: profile.wb.map(|w| w * exposure_scale),
        ..profile.clone()
    };
    let px: Vec<[f64; 3]> = hdr.pixels().map(|p| scaled.apply(p)).collect();
    ImageBuffer::from_pixels(hdr.width, hdr.height, &px)
}

/// Everything needed to regenerate or check a synthetic dataset.
#[derive(Debug, Clone)]
pub struct OracleDataset {
    pub manifest: DatasetManifest,
    pub grid: VoxelGrid,
    pub profile: GtToneProfile,
    pub cameras: Vec<Camera>,
    pub hdr: Vec<ImageBuffer>,
    pub ldr: Vec<ImageBuffer>,
}

/// Renders HDR through the ground-truth grid, applies the profile, and
/// writes `manifest.json`, per-view PNG/PFM/mask PNG, the profile and the
/// grid under `out`.
pub fn render_gt_dataset(
    grid: &VoxelGrid,
    rig: &[(Camera, Role)],
    profile: &GtToneProfile,
    opts: &RenderOptions,
    out: &Path,
) -> Result<OracleDataset> {
    if rig.len() < 2 {
        return Err(Error::invalid("need at least two views"));
    }
    if profile.views.len() != rig.len() {
        return Err(Error::invalid(format!(
            "profile has {} views but the rig has {}",
            profile.views.len(),
            rig.len()
        )));
    }
    profile.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rendered: Vec<(ImageBuffer, ImageBuffer)> = rig
        .par_iter()
        .zip(&profile.views)
        .map(|((cam, _), vp)| {
            let hdr = render_image(grid, cam, opts);
            let ldr = apply_profile(&hdr, vp, 1.0);
            (hdr, ldr)
        })
        .collect();
    let mut views = Vec::with_capacity(rig.len());
    for (i, ((cam, role), (hdr, ldr))) in rig.iter().zip(&rendered).enumerate() {
        let id = view_id(i);
        let (png, pfm, mask) = (format!("{id}.png"), format!("{id}.pfm"), format!("{id}_mask.png"));
        write_png(&out.join(&png), ldr)?;
        write_pfm(&out.join(&pfm), hdr)?;
        let train = match role {
            Role::Train => vec![true; ldr.pixel_count()],
            Role::Test => crate::io::metrics::left_half_mask(ldr.width, ldr.height),
        };
        let m: Vec<[f64; 3]> = train.iter().map(|&t| [if t { 1.0 } else { 0.0 }; 3]).collect();
        write_png(&out.join(&mask), &ImageBuffer::from_pixels(ldr.width, ldr.height, &m))?;
        views.push(ViewEntry {
            id,
            image: png,
            hdr: Some(pfm),
            mask: Some(mask),
            intrinsics: Intrinsics {
                fx: cam.fx,
                fy: cam.fy,
                cx: cam.cx,
                cy: cam.cy,
                width: cam.width,
                height: cam.height,
            },
            camera_to_world: cam.c2w(),
            role: *role,
        });
    }
    profile.save(&out.join(PROFILE_FILE))?;
    save_grid(grid, &out.join(GT_GRID_FILE))?;
    let manifest = DatasetManifest {
        schema: MANIFEST_SCHEMA.into(),
        bounds: grid.bounds(),
        reference_view: None,
        views,
        ground_truth: Some(GroundTruthEntry {
            profile: PROFILE_FILE.into(),
            grid: Some(GT_GRID_FILE.into()),
        }),
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    let (hdr, ldr) = rendered.into_iter().unzip();
    Ok(OracleDataset {
        manifest,
        grid: grid.clone(),
        profile: profile.clone(),
        cameras: rig.iter().map(|(c, _)| c.clone()).collect(),
        hdr,
        ldr,
    })
}

/// Scene → grid → rig → dataset on disk, all from one seed.
pub fn synthesize(spec: &SceneSpec, rig: &RigSpec, profile_name: &str, seed: u64, out: &Path) -> Result<OracleDataset> {
    let (_, mut grid) = build_scene(spec, seed)?;
    // Render from exactly what the grid file will hold.
    for v in grid.data_mut() {
        *v = *v as f32 as f64;
    }
    let cams = camera_rig(&spec.bounds, rig, seed)?;
    let profile = GtToneProfile::named(profile_name, cams.len())?;
    let opts = RenderOptions::for_grid(&grid);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(out.join(SCENE_FILE), spec.to_text()).map_err(|e| Error::io(out.join(SCENE_FILE), e))?;
    render_gt_dataset(&grid, &cams, &profile, &opts, out)
}

/// Loads the ground-truth profile referenced by a dataset.
pub fn load_profile(dataset: &Dataset) -> Result<Option<GtToneProfile>> {
    match &dataset.ground_truth {
        Some(gt) => Ok(Some(GtToneProfile::load(&dataset.dir.join(&gt.profile))?)),
        None => Ok(None),
    }
}

/// Loads the ground-truth grid referenced by a dataset, if any.
pub fn load_gt_grid(dataset: &Dataset) -> Result<Option<VoxelGrid>> {
    match dataset.ground_truth.as_ref().and_then(|g| g.grid.as_ref()) {
        Some(p) => Ok(Some(crate::field::load_grid(&dataset.dir.join(p))?)),
        None => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub reference: usize,
    /// Per view and channel: `|(wb_i / wb_ref) / (gt_i / gt_ref) − 1|`.
    pub wb_error: Vec<[f64; 3]>,
    /// Per view and channel, against the ground-truth curve on 256 knots.
    pub crf_rmse: Vec<[f64; 3]>,
    /// Scale-aligned HDR PSNR on held-out halves of test views (view index,
    /// dB).
    pub hdr_psnr: Vec<(usize, f64)>,
}

impl RecoveryReport {
    pub fn max_wb_error(&self) -> f64 {
        self.wb_error.iter().flatten().cloned().fold(0.0, f64::max)
    }

    pub fn max_crf_rmse(&self) -> f64 {
        self.crf_rmse.iter().flatten().cloned().fold(0.0, f64::max)
    }

    pub fn mean_hdr_psnr(&self) -> f64 {
        if self.hdr_psnr.is_empty() {
            return f64::NAN;
        }
        self.hdr_psnr.iter().map(|p| p.1).sum::<f64>() / self.hdr_psnr.len() as f64
    }

    pub fn min_hdr_psnr(&self) -> f64 {
        self.hdr_psnr.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }
}

/// Compares a trained model with the oracle it was trained on. Both sets of
/// gains are normalized by the trained model's reference view before
/// comparison (HDR radiance is only recoverable up to scale).
pub fn gt_compare(
    grid: &VoxelGrid,
    tone: &[ToneMapParams],
    reference: usize,
    opts: &RenderOptions,
    dataset: &Dataset,
    profile: &GtToneProfile,
) -> Result<RecoveryReport> {
    let n = dataset.views.len();
    if tone.len() != n || profile.views.len() != n {
        return Err(Error::invalid(format!(
            "view counts differ: dataset {n}, model {}, profile {}",
            tone.len(),
            profile.views.len()
        )));
    }
    if reference >= n {
        return Err(Error::invalid("reference view out of range"));
    }
    let (tr, gr) = (tone[reference].wb, profile.views[reference].wb);
    let wb_error = tone
        .iter()
        .zip(&profile.views)
        .map(|(t, g)| std::array::from_fn(|c| ((t.wb[c] / tr[c]) / (g.wb[c] / gr[c]) - 1.0).abs()))
        .collect();
    let crf_rmse = tone
        .iter()
        .zip(&profile.views)
        .map(|(t, g)| {
            let gt = g.tone_params().crf[0];
            std::array::from_fn(|c| crf_rmse(&t.crf[c], &gt))
        })
        .collect();
    let hdr_psnr = dataset
        .test_views()
        .filter_map(|(i, v)| v.hdr.as_ref().map(|h| (i, v, h)))
        .map(|(i, v, gt)| {
            let pred = render_image(grid, &v.camera, opts);
            let mask = right_half_mask(gt.width, gt.height);
            Ok((i, scale_aligned_psnr(&pred, gt, &mask)?.psnr))
        })
        .collect::<Result<_>>()?;
    Ok(RecoveryReport {
        reference,
        wb_error,
        crf_rmse,
        hdr_psnr,
    })
}

/// LDR rendering of a model view through (possibly edited) tone parameters,
/// clamped to [0, 1].
pub fn render_ldr(grid: &VoxelGrid, cam: &Camera, params: &ToneMapParams, opts: &RenderOptions) -> ImageBuffer {
    let hdr = render_image(grid, cam, opts);
    tonemap_image(&hdr, params)
}

pub fn tonemap_image(hdr: &ImageBuffer, params: &ToneMapParams) -> ImageBuffer {
    let px: Vec<[f64; 3]> = hdr
        .pixels()
        .map(|p| tonemap(p, params).map(|v| v.clamp(0.0, 1.0)))
        .collect();
    ImageBuffer::from_pixels(hdr.width, hdr.height, &px)
}
