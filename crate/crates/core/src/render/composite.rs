//! Ray samples and emission-absorption compositing with its adjoint.

use crate::math::Vec3;
use crate::render::camera::Ray;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RaySamples {
    pub positions: Vec<Vec3>,
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// Midpoint samples `t_i = t_near + (i + ½)·step` for
/// `i < floor((t_far - t_near) / step)`. Sigmas and colours are left empty.
pub fn sample_points(ray: &Ray, step: f64) -> Result<RaySamples> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("sample step must be positive, got {step}")));
    }
    let n = sample_count(ray, step);
    let mut s = RaySamples {
        positions: Vec::with_capacity(n),
        deltas: vec![step; n],
        ..Default::default()
    };
    for i in 0..n {
        s.positions.push(ray.at(ray.t_near + (i as f64 + 0.5) * step));
    }
    Ok(s)
}

#[inline]
pub(crate) fn sample_count(ray: &Ray, step: f64) -> usize {
    let span = ray.t_far - ray.t_near;
    if span > 0.0 {
        (span / step).floor() as usize
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    /// `w_i = T_i (1 - exp(-σ_i δ_i))`.
    pub weights: Vec<f64>,
    /// `T_i = exp(-Σ_{j<i} σ_j δ_j)`.
    pub transmittance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeGrad {
    pub d_sigma: Vec<f64>,
    pub d_color: Vec<[f64; 3]>,
}

/// `Ĉ = Σ_i T_i (1 - exp(-σ_i δ_i)) c_i`, with negative sigmas read as zero.
pub fn composite(samples: &RaySamples) -> Composite {
    let n = samples.len();
    let mut rgb = [0.0; 3];
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n);
    let mut depth = 0.0f64;
    for i in 0..n {
        let t = (-depth).exp();
        let sd = samples.sigmas[i].max(0.0) * samples.deltas[i];
        let w = t * (1.0 - (-sd).exp());
        for c in 0..3 {
            rgb[c] += w * samples.colors[i][c];
        }
        weights.push(w);
        transmittance.push(t);
        depth += sd;
    }
    Composite {
        rgb,
        weights,
        transmittance,
    }
}

/// Adjoint of [`composite`] for an upstream gradient on `Ĉ`:
/// `∂Ĉ/∂c_i = w_i` and
/// `∂Ĉ/∂σ_i = δ_i [T_i e^{-σ_i δ_i} c_i - Σ_{j>i} w_j c_j]`.
pub fn composite_backward(samples: &RaySamples, fwd: &Composite, upstream: [f64; 3]) -> CompositeGrad {
    let n = samples.len();
    let dot = |c: &[f64; 3]| upstream[0] * c[0] + upstream[1] * c[1] + upstream[2] * c[2];
    let mut d_sigma = vec![0.0; n];
    let mut d_color = vec![[0.0; 3]; n];
    let mut suffix = 0.0;
    for i in (0..n).rev() {
        let w = fwd.weights[i];
        let c = &samples.colors[i];
        d_color[i] = [w * upstream[0], w * upstream[1], w * upstream[2]];
        if samples.sigmas[i] >= 0.0 {
            let delta = samples.deltas[i];
            let keep = (-samples.sigmas[i] * delta).exp();
            d_sigma[i] = delta * (fwd.transmittance[i] * keep * dot(c) - suffix);
        }
        suffix += w * dot(c);
    }
    CompositeGrad { d_sigma, d_color }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn samples(sig: &[f64], del: &[f64], col: &[[f64; 3]]) -> RaySamples {
        RaySamples {
            positions: vec![[0.0; 3]; sig.len()],
            deltas: del.to_vec(),
            sigmas: sig.to_vec(),
            colors: col.to_vec(),
        }
    }

    #[test]
    fn midpoint_sampling() {
        let ray = Ray {
            origin: [0.0; 3],
            dir: [0.0, 0.0, 1.0],
            t_near: 0.0,
            t_far: 1.0,
        };
        let s = sample_points(&ray, 0.25).unwrap();
        let ts: Vec<f64> = s.positions.iter().map(|p| p[2]).collect();
        assert_eq!(ts, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(s.deltas.iter().all(|&d| d == 0.25));
        let short = Ray { t_far: 0.2, ..ray };
        assert!(sample_points(&short, 0.25).unwrap().is_empty());
        assert!(sample_points(&ray, 0.0).is_err());
    }

    #[test]
    fn empty_ray_is_black() {
        let c = composite(&RaySamples::default());
        assert_eq!(c.rgb, [0.0; 3]);
    }

    #[test]
    fn hand_composites() {
        let c = composite(&samples(&[0.0], &[1.0], &[[1.0, 1.0, 1.0]]));
        assert_eq!(c.rgb, [0.0; 3]);
        assert_eq!(c.weights, vec![0.0]);

        let c = composite(&samples(&[LN_2], &[1.0], &[[1.0, 1.0, 1.0]]));
        for v in c.rgb {
            assert!((v - 0.5).abs() < 1e-15);
        }

        let c = composite(&samples(
            &[LN_2, LN_2],
            &[1.0, 1.0],
            &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        ));
        assert!((c.weights[0] - 0.5).abs() < 1e-15 && (c.weights[1] - 0.25).abs() < 1e-15);
        assert!((c.rgb[0] - 0.5).abs() < 1e-15 && (c.rgb[1] - 0.25).abs() < 1e-15 && c.rgb[2] == 0.0);
    }

    #[test]
    fn single_sample_color_gradient() {
        let s = samples(&[0.7], &[0.3], &[[0.2, 0.4, 0.9]]);
        let f = composite(&s);
        let g = composite_backward(&s, &f, [1.0, 0.0, 0.0]);
        assert!((g.d_color[0][0] - (1.0 - (-0.21f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn transparent_sigma_gradient_is_self_term() {
        let col = [[0.3, 0.1, 0.2], [0.5, 0.6, 0.7], [0.9, 0.0, 0.4]];
        let s = samples(&[0.0; 3], &[0.1, 0.2, 0.3], &col);
        let f = composite(&s);
        let g = composite_backward(&s, &f, [1.0, 1.0, 1.0]);
        for i in 0..3 {
            let want = s.deltas[i] * col[i].iter().sum::<f64>();
            assert!((g.d_sigma[i] - want).abs() < 1e-15);
        }
        assert_eq!(f.rgb, [0.0; 3]);
    }
}
