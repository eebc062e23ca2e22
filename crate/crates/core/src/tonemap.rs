//! Per-view tone mapping `I_l = g(w(I_h))`: white-balance gains followed by
//! a 256-knot piecewise-linear response curve per channel, extended outside
//! [0, 1] with leaky branches so saturated pixels still carry gradient.

use std::fmt::Write as _;

use crate::{Error, Result};

pub const CRF_KNOTS: usize = 256;
pub const DEFAULT_ALPHA: f64 = 0.01;
pub const WB_FLOOR: f64 = 1e-6;

pub type CrfTable = [f64; CRF_KNOTS];

#[derive(Debug, Clone, PartialEq)]
pub struct ToneMapParams {
    pub wb: [f64; 3],
    pub crf: [CrfTable; 3],
    pub alpha: f64,
    /// Reference view: white balance is held fixed.
    pub frozen: bool,
}

impl ToneMapParams {
    /// Unit gains and identity curves.
    pub fn identity(alpha: f64) -> Self {
        let id = init_crf_identity();
        ToneMapParams {
            wb: [1.0; 3],
            crf: [id, id, id],
            alpha,
            frozen: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.wb.iter().all(|&w| w > 0.0 && w.is_finite()) {
            return Err(Error::invalid(format!("white balance must be positive, got {:?}", self.wb)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("leak coefficient must be positive"));
        }
        for t in &self.crf {
            if t[0] != 0.0 || t[CRF_KNOTS - 1] != 1.0 {
                return Err(Error::invalid("CRF endpoints must be pinned to 0 and 1"));
            }
            if !t.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { group: "crf".into() });
            }
        }
        Ok(())
    }

    /// Restores the invariants after an unconstrained update: positive
    /// gains and pinned curve endpoints.
    pub fn project(&mut self) {
        for w in &mut self.wb {
            *w = w.max(WB_FLOOR);
        }
        for t in &mut self.crf {
            t[0] = 0.0;
            t[CRF_KNOTS - 1] = 1.0;
        }
    }
}

/// `crf[k] = k / 255`.
pub fn init_crf_identity() -> CrfTable {
    let mut t = [0.0; CRF_KNOTS];
    for (k, v) in t.iter_mut().enumerate() {
        *v = k as f64 / (CRF_KNOTS - 1) as f64;
    }
    t
}

/// Samples `f` on the knot grid, then pins the endpoints.
pub fn crf_from_fn(f: impl Fn(f64) -> f64) -> CrfTable {
    let mut t = [0.0; CRF_KNOTS];
    for (k, v) in t.iter_mut().enumerate() {
        *v = f(k as f64 / (CRF_KNOTS - 1) as f64);
    }
    t[0] = 0.0;
    t[CRF_KNOTS - 1] = 1.0;
    t
}

pub fn apply_white_balance(c: [f64; 3], wb: [f64; 3]) -> Result<[f64; 3]> {
    if !wb.iter().all(|&w| w > 0.0) {
        return Err(Error::invalid(format!("white balance must be positive, got {wb:?}")));
    }
    Ok([c[0] * wb[0], c[1] * wb[1], c[2] * wb[2]])
}

#[inline]
fn locate(x: f64) -> (usize, f64) {
    let pos = x * (CRF_KNOTS - 1) as f64;
    let k = (pos.floor() as usize).min(CRF_KNOTS - 2);
    (k, pos - k as f64)
}

/// Leaky piecewise-linear response:
/// `αx` below 0, table interpolation on [0, 1], `-α/√x + α + 1` above 1.
#[inline]
pub fn eval_crf(x: f64, table: &CrfTable, alpha: f64) -> f64 {
    if x < 0.0 {
        alpha * x
    } else if x > 1.0 {
        -alpha / x.sqrt() + alpha + 1.0
    } else {
        let (k, f) = locate(x);
        (1.0 - f) * table[k] + f * table[k + 1]
    }
}

/// Partial derivatives of [`eval_crf`]: slope in `x` and the two
/// interpolation weights `(k, 1 - f)`, `(k + 1, f)` (zero on the leaky
/// branches).
#[inline]
pub fn crf_partials(x: f64, table: &CrfTable, alpha: f64) -> (f64, [(usize, f64); 2]) {
    if x < 0.0 {
        (alpha, [(0, 0.0), (1, 0.0)])
    } else if x > 1.0 {
        (0.5 * alpha * x.powf(-1.5), [(0, 0.0), (1, 0.0)])
    } else {
        let (k, f) = locate(x);
        let slope = (table[k + 1] - table[k]) * (CRF_KNOTS - 1) as f64;
        (slope, [(k, 1.0 - f), (k + 1, f)])
    }
}

pub fn tonemap(ih: [f64; 3], p: &ToneMapParams) -> [f64; 3] {
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = eval_crf(ih[c] * p.wb[c], &p.crf[c], p.alpha);
    }
    out
}

/// Gradients of a scalar loss through [`tonemap`]. CRF partials are
/// sparse: two knots per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneMapGrad {
    pub d_input: [f64; 3],
    pub d_wb: [f64; 3],
    pub d_crf: [[(usize, f64); 2]; 3],
}

pub fn tonemap_backward(ih: [f64; 3], p: &ToneMapParams, upstream: [f64; 3]) -> ToneMapGrad {
    let mut g = ToneMapGrad {
        d_input: [0.0; 3],
        d_wb: [0.0; 3],
        d_crf: [[(0, 0.0); 2]; 3],
    };
    for c in 0..3 {
        let x = ih[c] * p.wb[c];
        let (slope, knots) = crf_partials(x, &p.crf[c], p.alpha);
        let dx = upstream[c] * slope;
        g.d_input[c] = dx * p.wb[c];
        g.d_wb[c] = dx * ih[c];
        g.d_crf[c] = [(knots[0].0, upstream[c] * knots[0].1), (knots[1].0, upstream[c] * knots[1].1)];
    }
    g
}

/// Dense gradient accumulator for one view's tone-map parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneGrad {
    pub wb: [f64; 3],
    pub crf: [CrfTable; 3],
}

impl Default for ToneGrad {
    fn default() -> Self {
        ToneGrad {
            wb: [0.0; 3],
            crf: [[0.0; CRF_KNOTS]; 3],
        }
    }
}

impl ToneGrad {
    pub fn add(&mut self, g: &ToneMapGrad) {
        for c in 0..3 {
            self.wb[c] += g.d_wb[c];
            for &(k, v) in &g.d_crf[c] {
                self.crf[c][k] += v;
            }
        }
    }

    pub fn clear(&mut self) {
        *self = ToneGrad::default();
    }
}

/// Copy of `params` for controllable re-rendering: white balance replaced
/// by `wb_override` (if any) and scaled by `exposure_scale`, curves replaced
/// by `crf_override`.
pub fn edit_render(
    params: &ToneMapParams,
    wb_override: Option<[f64; 3]>,
    exposure_scale: Option<f64>,
    crf_override: Option<&[CrfTable; 3]>,
) -> Result<ToneMapParams> {
    let scale = exposure_scale.unwrap_or(1.0);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("exposure scale must be positive, got {scale}")));
    }
    let base = wb_override.unwrap_or(params.wb);
    if !base.iter().all(|&w| w > 0.0 && w.is_finite()) {
        return Err(Error::invalid(format!("white balance override must be positive, got {base:?}")));
    }
    let mut out = params.clone();
    out.wb = if scale == 1.0 { base } else { base.map(|w| w * scale) };
    if let Some(c) = crf_override {
        out.crf = *c;
    }
    Ok(out)
}

/// CSV export, one row per knot per channel per view.
pub fn crf_csv<'a>(views: impl IntoIterator<Item = (&'a str, &'a ToneMapParams)>) -> String {
    let mut s = String::from("view,channel,knot,domain,value\n");
    for (id, p) in views {
        for (c, name) in ["r", "g", "b"].iter().enumerate() {
            for k in 0..CRF_KNOTS {
                let _ = writeln!(
                    s,
                    "{id},{name},{k},{:.8},{:.8}",
                    k as f64 / (CRF_KNOTS - 1) as f64,
                    p.crf[c][k]
                );
            }
        }
    }
    s
}
