//! Evaluation metrics: masked PSNR, scale-aligned HDR PSNR, CRF RMSE.

use crate::io::image::ImageBuffer;
use crate::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

/// Pixels strictly left of the centre column (odd widths drop the centre).
pub fn left_half_mask(width: u32, height: u32) -> Vec<bool> {
    half_mask(width, height, true)
}

/// Pixels strictly right of the centre column (odd widths drop the centre).
pub fn right_half_mask(width: u32, height: u32) -> Vec<bool> {
    half_mask(width, height, false)
}

fn half_mask(width: u32, height: u32, left: bool) -> Vec<bool> {
    let (lo_end, hi_start) = if width % 2 == 0 {
        (width / 2, width / 2)
    } else {
        (width / 2, width / 2 + 1)
    };
    let mut m = Vec::with_capacity(width as usize * height as usize);
    for _ in 0..height {
        for x in 0..width {
            m.push(if left { x < lo_end } else { x >= hi_start });
        }
    }
    m
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

/// `-10 log10(MSE)` over the rgb values of masked pixels, capped at 99 dB.
pub fn masked_psnr(pred: &ImageBuffer, gt: &ImageBuffer, mask: &[bool]) -> Result<f64> {
    check_shapes(pred, gt, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (p, g) = (pred.pixel(i), gt.pixel(i));
        for c in 0..3 {
            sum += (p[c] - g[c]).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::invalid("PSNR mask selects no pixels"));
    }
    Ok(psnr_from_mse(sum / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleAlignedPsnr {
    pub psnr: f64,
    /// Per-channel least-squares scale applied to the prediction.
    pub scales: [f64; 3],
    /// Normalizer: 99th percentile of the masked ground-truth values.
    pub normalizer: f64,
}

/// HDR PSNR modulo a per-channel scale: `s_c = Σ pred·gt / Σ pred²`, then
/// PSNR of `s·pred` against `gt`, both divided by the 99th percentile of
/// the masked ground truth.
pub fn scale_aligned_psnr(pred: &ImageBuffer, gt: &ImageBuffer, mask: &[bool]) -> Result<ScaleAlignedPsnr> {
    check_shapes(pred, gt, mask)?;
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::invalid("PSNR mask selects no pixels"));
    }
    let mut num = [0.0; 3];
    let mut den = [0.0; 3];
    let mut gt_vals = Vec::with_capacity(idx.len() * 3);
    for &i in &idx {
        let (p, g) = (pred.pixel(i), gt.pixel(i));
        for c in 0..3 {
            num[c] += p[c] * g[c];
            den[c] += p[c] * p[c];
            gt_vals.push(g[c]);
        }
    }
    if !gt_vals.iter().any(|&v| v > 0.0) {
        return Err(Error::invalid("ground truth has no positive masked value"));
    }
    let mut scales = [0.0; 3];
    for c in 0..3 {
        if !(den[c] > 0.0) {
            return Err(Error::invalid(format!(
                "prediction channel {c} is identically zero; scale is undefined"
            )));
        }
        scales[c] = num[c] / den[c];
    }
    let normalizer = percentile(&mut gt_vals, 0.99).max(f64::MIN_POSITIVE);
    let mut sum = 0.0;
    for &i in &idx {
        let (p, g) = (pred.pixel(i), gt.pixel(i));
        for c in 0..3 {
            sum += ((scales[c] * p[c] - g[c]) / normalizer).powi(2);
        }
    }
    Ok(ScaleAlignedPsnr {
        psnr: psnr_from_mse(sum / (3 * idx.len()) as f64),
        scales,
        normalizer,
    })
}

/// Nearest-rank percentile, `q` in [0, 1].
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

/// Root-mean-square difference of two knot tables sampled on the same
/// uniform domain grid.
pub fn crf_rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "CRF tables must have equal length");
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (s / a.len() as f64).sqrt()
}

fn check_shapes(pred: &ImageBuffer, gt: &ImageBuffer, mask: &[bool]) -> Result<()> {
    if !pred.same_shape(gt) || mask.len() != gt.pixel_count() {
        return Err(Error::invalid(format!(
            "shape mismatch: pred {}x{}, gt {}x{}, mask {}",
            pred.width,
            pred.height,
            gt.width,
            gt.height,
            mask.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tonemap::init_crf_identity;

    fn filled(w: u32, h: u32, f: impl Fn(usize) -> f64) -> ImageBuffer {
        let mut img = ImageBuffer::new(w, h);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = f(i);
        }
        img
    }

    #[test]
    fn psnr_basics() {
        let gt = filled(4, 2, |i| (i as f64 * 0.07) % 0.8);
        let all = vec![true; 8];
        assert_eq!(masked_psnr(&gt, &gt, &all).unwrap(), PSNR_CAP);
        let off = filled(4, 2, |i| (i as f64 * 0.07) % 0.8 + 0.1);
        assert!((masked_psnr(&off, &gt, &all).unwrap() - 20.0).abs() < 1e-9);
        assert!(masked_psnr(&gt, &gt, &[false; 8]).is_err());
    }

    #[test]
    fn right_half_isolated_from_left_changes() {
        let gt = filled(6, 3, |_| 0.4);
        let mut pred = gt.clone();
        for y in 0..3 {
            for x in 0..3 {
                pred.set(x, y, [0.9, 0.0, 0.1]);
            }
        }
        let right = right_half_mask(6, 3);
        assert_eq!(masked_psnr(&pred, &gt, &right).unwrap(), PSNR_CAP);
    }

    #[test]
    fn odd_width_drops_centre_column() {
        let l = left_half_mask(5, 1);
        let r = right_half_mask(5, 1);
        assert_eq!(l, vec![true, true, false, false, false]);
        assert_eq!(r, vec![false, false, false, true, true]);
        let l = left_half_mask(4, 1);
        let r = right_half_mask(4, 1);
        assert_eq!(l, vec![true, true, false, false]);
        assert_eq!(r, vec![false, false, true, true]);
    }

    #[test]
    fn scale_alignment_removes_global_scale() {
        let gt = filled(8, 8, |i| 0.01 + (i as f64 * 0.37) % 5.0);
        let mask = vec![true; 64];
        let double = filled(8, 8, |i| 2.0 * (0.01 + (i as f64 * 0.37) % 5.0));
        let r = scale_aligned_psnr(&double, &gt, &mask).unwrap();
        assert_eq!(r.psnr, PSNR_CAP);
        for s in r.scales {
            assert!((s - 0.5).abs() < 1e-12);
        }
        let r = scale_aligned_psnr(&gt, &gt, &mask).unwrap();
        assert_eq!(r.psnr, PSNR_CAP);
        assert!(r.scales.iter().all(|&s| (s - 1.0).abs() < 1e-12));
        let zero = ImageBuffer::new(8, 8);
        assert!(scale_aligned_psnr(&zero, &gt, &mask).is_err());
    }

    #[test]
    fn scale_aligned_matches_noise_oracle() {
        use rand::SeedableRng;
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (64u32, 64u32);
        let gt = filled(w, h, |i| 0.2 + ((i * 7919) % 997) as f64 / 997.0 * 3.0);
        let sigma = 0.05;
        let mut pred = gt.clone();
        for v in pred.data.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let mask = vec![true; (w * h) as usize];
        let r = scale_aligned_psnr(&pred, &gt, &mask).unwrap();
        let mut vals = gt.data.clone();
        let p99 = percentile(&mut vals, 0.99);
        let analytic = -10.0 * (sigma * sigma / (p99 * p99)).log10();
        assert!((r.psnr - analytic).abs() < 0.5, "{} vs {}", r.psnr, analytic);
    }

    #[test]
    fn crf_rmse_fixtures() {
        let id = init_crf_identity();
        assert_eq!(crf_rmse(&id, &id), 0.0);
        let mut shifted = id;
        for v in &mut shifted[1..255] {
            *v += 0.01;
        }
        // sqrt(254 / 256) * 0.01
        assert!((crf_rmse(&id, &shifted) - 0.009_960_860_906_568_267).abs() < 1e-12);
        let gamma: Vec<f64> = (0..256).map(|k| (k as f64 / 255.0).powf(1.0 / 2.2)).collect();
        // Brute-force value computed once with an independent script.
        assert!((crf_rmse(&id, &gamma) - GAMMA22_RMSE).abs() < 1e-12);
    }

    const GAMMA22_RMSE: f64 = 0.205_329_610_359_266_45;
}
