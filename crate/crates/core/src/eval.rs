//! Held-out evaluation: masked PSNR on the right halves of test views and,
//! for synthetic datasets, recovery of the ground-truth radiometry.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::field::VoxelGrid;
use crate::io::image::{quantize, ImageBuffer};
use crate::io::metrics::{masked_psnr, right_half_mask};
use crate::io::Dataset;
use crate::oracle::{apply_profile, gt_compare, load_gt_grid, load_profile, RecoveryReport};
use crate::render::{render_image, Camera, RenderOptions};
use crate::tonemap::{tonemap, ToneMapParams};
use crate::trainer::{render_options, ToneMode, TrainCheckpoint};
use crate::{Error, Result};

/// LDR prediction as it would be stored: tone-mapped (or the raw HDR for
/// models without tone mapping), clamped and quantized to 8 bits.
pub fn predict_ldr(grid: &VoxelGrid, cam: &Camera, tone: Option<&ToneMapParams>, opts: &RenderOptions) -> ImageBuffer {
    let hdr = render_image(grid, cam, opts);
    ldr_from_hdr(&hdr, tone)
}

pub fn ldr_from_hdr(hdr: &ImageBuffer, tone: Option<&ToneMapParams>) -> ImageBuffer {
    let px: Vec<[f64; 3]> = hdr
        .pixels()
        .map(|p| {
            let v = match tone {
                Some(t) => tonemap(p, t),
                None => p,
            };
            v.map(|x| quantize(x) as f64 / 255.0)
        })
        .collect();
    ImageBuffer::from_pixels(hdr.width, hdr.height, &px)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub view: usize,
    pub id: String,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub recovery: Option<RecoveryReport>,
}

impl EvalReport {
    fn from_rows(rows: Vec<EvalRow>, recovery: Option<RecoveryReport>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("dataset has no test views"));
        }
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
        Ok(EvalReport {
            rows,
            mean_psnr,
            recovery,
        })
    }

    /// Machine-readable form: one row per test view, then the mean, then
    /// recovery metrics when available.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,view,value\n");
        for r in &self.rows {
            let _ = writeln!(s, "psnr,{},{:.6}", r.id, r.psnr);
        }
        let _ = writeln!(s, "psnr,mean,{:.6}", self.mean_psnr);
        if let Some(rec) = &self.recovery {
            for (i, (w, c)) in rec.wb_error.iter().zip(&rec.crf_rmse).enumerate() {
                for ch in 0..3 {
                    let _ = writeln!(s, "wb_error_{},{},{:.6e}", ["r", "g", "b"][ch], i, w[ch]);
                    let _ = writeln!(s, "crf_rmse_{},{},{:.6e}", ["r", "g", "b"][ch], i, c[ch]);
                }
            }
            for (i, p) in &rec.hdr_psnr {
                let _ = writeln!(s, "hdr_psnr,{i},{p:.6}");
            }
            let _ = writeln!(s, "wb_error,max,{:.6e}", rec.max_wb_error());
            let _ = writeln!(s, "crf_rmse,max,{:.6e}", rec.max_crf_rmse());
            let _ = writeln!(s, "hdr_psnr,mean,{:.6}", rec.mean_hdr_psnr());
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "{:<12} right-half PSNR {:>7.2} dB", r.id, r.psnr);
        }
        let _ = writeln!(s, "{:<12} right-half PSNR {:>7.2} dB", "mean", self.mean_psnr);
        if let Some(rec) = &self.recovery {
            let _ = writeln!(s, "white balance error (max, reference-normalized): {:.4}", rec.max_wb_error());
            let _ = writeln!(s, "CRF RMSE (max over views/channels):            {:.4}", rec.max_crf_rmse());
            let _ = writeln!(s, "scale-aligned HDR PSNR (mean over test views): {:.2} dB", rec.mean_hdr_psnr());
        }
        s
    }
}

fn psnr_rows(dataset: &Dataset, mut predict: impl FnMut(usize) -> ImageBuffer) -> Result<Vec<EvalRow>> {
    dataset
        .test_views()
        .map(|(i, v)| {
            let pred = predict(i);
            let mask = right_half_mask(v.ldr.width, v.ldr.height);
            Ok(EvalRow {
                view: i,
                id: v.id.clone(),
                psnr: masked_psnr(&pred, &v.ldr, &mask)?,
            })
        })
        .collect()
}

/// Evaluates a trained checkpoint on the dataset's test views.
pub fn evaluate(ck: &TrainCheckpoint, dataset: &Dataset) -> Result<EvalReport> {
    let ids: Vec<&str> = dataset.views.iter().map(|v| v.id.as_str()).collect();
    if ids.len() != ck.view_ids.len() || ids.iter().zip(&ck.view_ids).any(|(a, b)| *a != b) {
        return Err(Error::invalid("checkpoint and dataset have different views"));
    }
    let opts = render_options(&ck.config, &ck.grid);
    let full = ck.config.tone_mode == ToneMode::Full;
    let rows = psnr_rows(dataset, |i| {
        predict_ldr(&ck.grid, &dataset.views[i].camera, full.then(|| &ck.tone[i]), &opts)
    })?;
    let recovery = match (full, load_profile(dataset)?) {
        (true, Some(profile)) => Some(gt_compare(&ck.grid, &ck.tone, ck.reference, &opts, dataset, &profile)?),
        _ => None,
    };
    EvalReport::from_rows(rows, recovery)
}

/// Evaluates the dataset's own ground truth (grid and exact tone curves)
/// as if it were a trained model.
pub fn evaluate_oracle(dataset: &Dataset) -> Result<EvalReport> {
    let profile = load_profile(dataset)?.ok_or_else(|| Error::invalid("dataset has no ground-truth profile"))?;
    let grid = load_gt_grid(dataset)?.ok_or_else(|| Error::invalid("dataset has no ground-truth grid"))?;
    if profile.views.len() != dataset.views.len() {
        return Err(Error::invalid("profile and dataset have different view counts"));
    }
    let opts = RenderOptions::for_grid(&grid);
    let rows = psnr_rows(dataset, |i| {
        let hdr = render_image(&grid, &dataset.views[i].camera, &opts);
        let ldr = apply_profile(&hdr, &profile.views[i], 1.0);
        ldr_from_hdr(&ldr, None)
    })?;
    let tone: Vec<ToneMapParams> = profile.views.iter().map(|v| v.tone_params()).collect();
    let recovery = gt_compare(&grid, &tone, 0, &opts, dataset, &profile)?;
    EvalReport::from_rows(rows, Some(recovery))
}
