//! Saturation mask, reconstruction / total-variation / CRF-smoothness
//! losses and their gradients.

use serde::{Deserialize, Serialize};

use crate::field::grid::{VoxelGrid, PAYLOAD_LEN, SIGMA_SLOT};
use crate::tonemap::{CrfTable, CRF_KNOTS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_tv_sigma: f64,
    pub lambda_tv_sh: f64,
    pub lambda_smooth: f64,
    pub tv_epsilon: f64,
    pub mask_low: f64,
    pub mask_high: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_tv_sigma: 5e-4,
            lambda_tv_sh: 1e-2,
            lambda_smooth: 1e-3,
            tv_epsilon: 1e-6,
            mask_low: 0.15,
            mask_high: 0.9,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_tv_sigma,
            self.lambda_tv_sh,
            self.lambda_smooth,
            self.tv_epsilon,
        ];
        if !all.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and nonnegative"));
        }
        if !(0.0 < self.mask_low && self.mask_low < self.mask_high && self.mask_high < 1.0) {
            return Err(Error::invalid("mask thresholds need 0 < low < high < 1"));
        }
        Ok(())
    }
}

/// Leaky saturation weight of an LDR value. Quadratic ramps from 0.25 at
/// the extremes to 1 on `[low, high]`; the upper ramp mirrors the lower one.
pub fn saturation_mask(x: f64, low: f64, high: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x < low {
        ((x + low) / (2.0 * low)).powi(2)
    } else if x > high {
        (((1.0 - x) + (1.0 - high)) / (2.0 * (1.0 - high))).powi(2)
    } else {
        1.0
    }
}

/// Product of the per-channel masks of an observed rgb pixel.
pub fn pixel_mask(rgb: [f64; 3], low: f64, high: f64) -> f64 {
    rgb.iter().map(|&v| saturation_mask(v, low, high)).product()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconSample {
    pub observed: [f64; 3],
    pub predicted: [f64; 3],
    pub mask: f64,
}

/// `(1/|R|) Σ M(r) ‖I(r) - T(Ĉ(r))‖²`.
pub fn recon_loss(batch: &[ReconSample]) -> Result<f64> {
    Ok(recon_loss_grad(batch)?.0)
}

/// Loss plus `∂L/∂predicted` per sample.
pub fn recon_loss_grad(batch: &[ReconSample]) -> Result<(f64, Vec<[f64; 3]>)> {
    if batch.is_empty() {
        return Err(Error::invalid("reconstruction loss needs at least one ray"));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let grads = batch
        .iter()
        .map(|s| {
            let mut g = [0.0; 3];
            for c in 0..3 {
                let r = s.predicted[c] - s.observed[c];
                loss += s.mask * r * r * inv;
                g[c] = 2.0 * s.mask * r * inv;
            }
            g
        })
        .collect();
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvChannels {
    Sigma,
    Sh,
}

impl TvChannels {
    fn slots(self) -> std::ops::Range<usize> {
        match self {
            TvChannels::Sigma => SIGMA_SLOT..SIGMA_SLOT + 1,
            TvChannels::Sh => 0..SIGMA_SLOT,
        }
    }
}

/// `(1/|V|) Σ_{v,d} sqrt(Δx² + Δy² + Δz² + ε)` with forward differences in
/// index space; a missing +axis neighbour contributes a zero difference.
pub fn tv_loss(grid: &VoxelGrid, channels: TvChannels, epsilon: f64) -> f64 {
    tv_impl(grid, channels, epsilon, None)
}

/// Returns the TV loss and adds `scale · ∂TV/∂payload` into `grad`.
pub fn tv_loss_backward(
    grid: &VoxelGrid,
    channels: TvChannels,
    epsilon: f64,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    tv_impl(grid, channels, epsilon, Some((scale, grad)))
}

fn tv_impl(
    grid: &VoxelGrid,
    channels: TvChannels,
    epsilon: f64,
    mut grad: Option<(f64, &mut [f64])>,
) -> f64 {
    let d = grid.vertex_dims();
    let data = grid.data();
    let occ = grid.occupancy();
    let nv = grid.vertex_count();
    let inv = 1.0 / nv as f64;
    let strides = [1usize, d[0], d[0] * d[1]];
    let value = |idx: usize, slot: usize| if occ[idx] { data[idx * PAYLOAD_LEN + slot] } else { 0.0 };
    let mut total = 0.0;
    for k in 0..d[2] {
        for j in 0..d[1] {
            for i in 0..d[0] {
                let idx = i + d[0] * (j + d[1] * k);
                let coords = [i, j, k];
                let nbr: [Option<usize>; 3] = std::array::from_fn(|a| {
                    (coords[a] + 1 < d[a]).then_some(idx + strides[a])
                });
                for slot in channels.slots() {
                    let v = value(idx, slot);
                    let mut diffs = [0.0; 3];
                    for a in 0..3 {
                        if let Some(n) = nbr[a] {
                            diffs[a] = value(n, slot) - v;
                        }
                    }
                    let s = (diffs[0] * diffs[0] + diffs[1] * diffs[1] + diffs[2] * diffs[2] + epsilon).sqrt();
                    total += s;
                    if let Some((scale, g)) = grad.as_mut() {
                        if s == 0.0 {
                            continue;
                        }
                        let f = *scale * inv / s;
                        if occ[idx] {
                            g[idx * PAYLOAD_LEN + slot] -= f * (diffs[0] + diffs[1] + diffs[2]);
                        }
                        for a in 0..3 {
                            if let Some(n) = nbr[a] {
                                if occ[n] {
                                    g[n * PAYLOAD_LEN + slot] += f * diffs[a];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    total * inv
}

/// Sum of squared second differences over interior knots.
pub fn smooth_loss_table(t: &CrfTable) -> f64 {
    (1..CRF_KNOTS - 1)
        .map(|k| (t[k + 1] - 2.0 * t[k] + t[k - 1]).powi(2))
        .sum()
}

/// Smoothness summed over views and channels.
pub fn smooth_loss<'a>(tables: impl IntoIterator<Item = &'a [CrfTable; 3]>) -> f64 {
    tables
        .into_iter()
        .flat_map(|v| v.iter())
        .map(smooth_loss_table)
        .sum()
}

/// Adds `scale · ∂smooth/∂t` into `grad`.
pub fn smooth_loss_backward(t: &CrfTable, scale: f64, grad: &mut CrfTable) {
    for k in 1..CRF_KNOTS - 1 {
        let d2 = t[k + 1] - 2.0 * t[k] + t[k - 1];
        let g = 2.0 * scale * d2;
        grad[k + 1] += g;
        grad[k] -= 2.0 * g;
        grad[k - 1] += g;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub recon: f64,
    pub tv_sigma: f64,
    pub tv_sh: f64,
    pub smooth: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("recon", self.recon),
            ("tv_sigma", self.tv_sigma),
            ("tv_sh", self.tv_sh),
            ("smooth", self.smooth),
        ]
    }
}

/// `recon + λ_TV,σ·tv_σ + λ_TV,SH·tv_SH + λ_smooth·smooth`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    for (name, v) in c.named() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                group: format!("loss component {name}"),
            });
        }
    }
    Ok(c.recon + w.lambda_tv_sigma * c.tv_sigma + w.lambda_tv_sh * c.tv_sh + w.lambda_smooth * c.smooth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{VertexPayload, VoxelGrid};
    use crate::math::Aabb;
    use crate::tonemap::init_crf_identity;

    #[test]
    fn mask_values() {
        assert_eq!(saturation_mask(0.5, 0.15, 0.9), 1.0);
        assert!((saturation_mask(0.0, 0.15, 0.9) - 0.25).abs() < 1e-15);
        assert!((saturation_mask(1.0, 0.15, 0.9) - 0.25).abs() < 1e-15);
        assert!((pixel_mask([1.0; 3], 0.15, 0.9) - 0.015625).abs() < 1e-15);
    }

    #[test]
    fn recon_examples() {
        let s = ReconSample {
            observed: [0.5, 0.2, 0.1],
            predicted: [0.5, 0.2, 0.1],
            mask: 1.0,
        };
        assert_eq!(recon_loss(&[s]).unwrap(), 0.0);
        let s = ReconSample {
            predicted: [0.6, 0.2, 0.1],
            ..s
        };
        assert!((recon_loss(&[s]).unwrap() - 0.01).abs() < 1e-15);
        let sat = ReconSample {
            observed: [1.0; 3],
            predicted: [0.9, 1.0, 1.0],
            mask: pixel_mask([1.0; 3], 0.15, 0.9),
        };
        assert!((recon_loss(&[sat]).unwrap() - 0.015625 * 0.01).abs() < 1e-15);
        assert!(recon_loss(&[]).is_err());
    }

    #[test]
    fn tv_constant_grids() {
        let g = VoxelGrid::init([3, 2, 4], Aabb::cube(1.0)).unwrap();
        // Equal up to summation rounding.
        assert!((tv_loss(&g, TvChannels::Sigma, 1e-6) - 1e-3).abs() < 1e-15);
        assert!((tv_loss(&g, TvChannels::Sh, 1e-6) - 0.027).abs() < 0.027 * 1e-13);
    }

    #[test]
    fn tv_two_cell_step_matches_hand_sum() {
        // 2x1x1 cells: 3x2x2 vertices. Sigma 0.2 on the x = 2 column, 0 elsewhere.
        let mut g = VoxelGrid::filled([2, 1, 1], Aabb::cube(1.0), &VertexPayload::ZERO).unwrap();
        for k in 0..2 {
            for j in 0..2 {
                let idx = g.vertex_index(2, j, k);
                g.payload_mut(idx)[SIGMA_SLOT] = 0.2;
            }
        }
        let eps: f64 = 1e-6;
        // Brute force: 12 vertices; the 4 with x = 1 see Δx = 0.2.
        let mut sum = 0.0;
        for _k in 0..2 {
            for _j in 0..2 {
                for i in 0..3 {
                    let dx: f64 = if i == 1 { 0.2 } else { 0.0 };
                    sum += (dx * dx + eps).sqrt();
                }
            }
        }
        let want = sum / 12.0;
        assert!((tv_loss(&g, TvChannels::Sigma, eps) - want).abs() < 1e-12);
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let mut g = VoxelGrid::init([2, 3, 2], Aabb::cube(1.0)).unwrap();
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 101) as f64 / 101.0 - 0.5) * 0.8;
        }
        g.set_occupied(5, false);
        for ch in [TvChannels::Sigma, TvChannels::Sh] {
            let mut grad = vec![0.0; g.data().len()];
            tv_loss_backward(&g, ch, 1e-4, 1.0, &mut grad);
            for idx in [0usize, 17, 27, 28 * 7 + 27, 28 * 20 + 3, 28 * 5 + 27] {
                let h = 1e-6;
                let mut gp = g.clone();
                gp.data_mut()[idx] += h;
                let mut gm = g.clone();
                gm.data_mut()[idx] -= h;
                let fd = (tv_loss(&gp, ch, 1e-4) - tv_loss(&gm, ch, 1e-4)) / (2.0 * h);
                assert!((fd - grad[idx]).abs() < 1e-7, "{ch:?} idx {idx}: {fd} vs {}", grad[idx]);
            }
        }
    }

    #[test]
    fn smooth_loss_examples() {
        let id = init_crf_identity();
        // k/255 is only linear up to rounding.
        assert!(smooth_loss_table(&id) < 1e-28);
        let mut sq = [0.0; CRF_KNOTS];
        for (k, v) in sq.iter_mut().enumerate() {
            *v = (k as f64 / 255.0).powi(2);
        }
        let want = 254.0 * (2.0 / (255.0f64 * 255.0)).powi(2);
        assert!((smooth_loss_table(&sq) - want).abs() < 1e-20);
        assert!((want - 2.403e-7).abs() < 1e-10);
        let mut shifted = sq;
        for (k, v) in shifted.iter_mut().enumerate() {
            *v += 0.3 - 0.7 * k as f64;
        }
        assert!((smooth_loss_table(&shifted) - smooth_loss_table(&sq)).abs() < 1e-18);
    }

    #[test]
    fn smooth_gradient_matches_finite_differences() {
        let mut t = init_crf_identity();
        for (k, v) in t.iter_mut().enumerate() {
            *v = (k as f64 / 255.0).powf(0.4) + 0.01 * ((k * 13 % 7) as f64);
        }
        let mut g = [0.0; CRF_KNOTS];
        smooth_loss_backward(&t, 1.0, &mut g);
        for k in [0usize, 1, 100, 254, 255] {
            let h = 1e-6;
            let mut p = t;
            p[k] += h;
            let mut m = t;
            m[k] -= h;
            let fd = (smooth_loss_table(&p) - smooth_loss_table(&m)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn total_loss_composition() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossComponents::default(), &w).unwrap(), 0.0);
        let ones = LossComponents {
            recon: 1.0,
            tv_sigma: 1.0,
            tv_sh: 1.0,
            smooth: 1.0,
        };
        assert!((total_loss(&ones, &w).unwrap() - 1.0115).abs() < 1e-15);
        let bad = LossComponents {
            tv_sh: f64::NAN,
            ..ones
        };
        assert!(matches!(total_loss(&bad, &w), Err(Error::NonFinite { .. })));
    }
}
