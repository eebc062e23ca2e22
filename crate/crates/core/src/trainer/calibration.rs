//! White-balance initialization and reference-view selection from
//! per-image channel means.

use crate::io::Dataset;
use crate::{Error, Result};

/// Channel sums and pixel count of one image.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageStats {
    pub sum: [f64; 3],
    pub count: usize,
}

impl ImageStats {
    pub fn from_pixels(pixels: impl IntoIterator<Item = [f64; 3]>) -> Self {
        let mut s = ImageStats::default();
        for p in pixels {
            for c in 0..3 {
                s.sum[c] += p[c];
            }
            s.count += 1;
        }
        s
    }

    pub fn mean(&self) -> [f64; 3] {
        let n = self.count.max(1) as f64;
        [self.sum[0] / n, self.sum[1] / n, self.sum[2] / n]
    }
}

/// Per-view statistics over the trainable pixels (the held-out half of a
/// test view is never looked at).
pub fn dataset_stats(dataset: &Dataset) -> Vec<ImageStats> {
    dataset
        .views
        .iter()
        .map(|v| {
            ImageStats::from_pixels(
                v.train_mask
                    .iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(|(i, _)| v.ldr.pixel(i)),
            )
        })
        .collect()
}

/// Mean over all pixels of all images.
pub fn global_mean(stats: &[ImageStats]) -> [f64; 3] {
    let mut total = ImageStats::default();
    for s in stats {
        for c in 0..3 {
            total.sum[c] += s.sum[c];
        }
        total.count += s.count;
    }
    total.mean()
}

/// `wb_{c,i} = mean_i(c) / mean_all(c)`.
pub fn init_white_balance(stats: &[ImageStats]) -> Result<Vec<[f64; 3]>> {
    if let Some(i) = stats.iter().position(|s| s.count == 0) {
        return Err(Error::invalid(format!("image {i} has no pixels")));
    }
    let g = global_mean(stats);
    if let Some(c) = (0..3).find(|&c| !(g[c] > 0.0)) {
        return Err(Error::invalid(format!(
            "dataset-wide mean of channel {c} is zero; white balance cannot be initialized"
        )));
    }
    Ok(stats
        .iter()
        .map(|s| {
            let m = s.mean();
            [m[0] / g[0], m[1] / g[1], m[2] / g[2]]
        })
        .collect())
}

/// View whose mean colour is closest to the dataset mean; ties go to the
/// lowest index. Distances within `TIE_TOLERANCE` (relative) count as ties,
/// since the mean itself carries rounding error.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub fn select_reference_view(stats: &[ImageStats]) -> usize {
    let g = global_mean(stats);
    let mut best = (0, f64::INFINITY);
    for (i, s) in stats.iter().enumerate() {
        let m = s.mean();
        let d = ((m[0] - g[0]).powi(2) + (m[1] - g[1]).powi(2) + (m[2] - g[2]).powi(2)).sqrt();
        if d < best.1 - TIE_TOLERANCE * (1.0 + best.1.min(1e300)) {
            best = (i, d);
        }
    }
    best.0
}
