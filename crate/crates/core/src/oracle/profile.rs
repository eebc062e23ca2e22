//! Ground-truth per-view radiometry: white-balance gains (exposure folded
//! in as a global scale) and a gamma response `g(x) = x^(1/γ)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tonemap::{crf_from_fn, ToneMapParams, DEFAULT_ALPHA};
use crate::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 3.0;
pub const EV_CYCLE: [f64; 3] = [0.0, -3.0, 3.0];
pub const CHANNEL_GAIN: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewProfile {
    pub ev: f64,
    pub wb: [f64; 3],
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtToneProfile {
    pub name: String,
    pub views: Vec<ViewProfile>,
}

impl GtToneProfile {
    /// View `i` gets exposure `EV_CYCLE[i % 3]` and a 1.25 gain on no
    /// channel, red, green or blue in turn (cycling every three views), so
    /// the first twelve views cover every exposure/gain combination.
    pub fn varying(n: usize) -> Self {
        let views = (0..n)
            .map(|i| {
                let ev = EV_CYCLE[i % 3];
                let mut wb = [2f64.powf(ev); 3];
                let gain_slot = (i / 3) % 4;
                if gain_slot > 0 {
                    wb[gain_slot - 1] *= CHANNEL_GAIN;
                }
                ViewProfile {
                    ev,
                    wb,
                    gamma: DEFAULT_GAMMA,
                }
            })
            .collect();
        GtToneProfile {
            name: "varying".into(),
            views,
        }
    }

    /// Identical radiometry for every view.
    pub fn static_profile(n: usize) -> Self {
        GtToneProfile {
            name: "static".into(),
            views: vec![
                ViewProfile {
                    ev: 0.0,
                    wb: [1.0; 3],
                    gamma: DEFAULT_GAMMA,
                };
                n
            ],
        }
    }

    pub fn named(name: &str, n: usize) -> Result<Self> {
        match name {
            "varying" => Ok(Self::varying(n)),
            "static" => Ok(Self::static_profile(n)),
            other => Err(Error::invalid(format!("unknown profile {other:?} (expected varying or static)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.views.iter().enumerate() {
            if !v.wb.iter().all(|&w| w > 0.0 && w.is_finite()) || !(v.gamma > 0.0) {
                return Err(Error::invalid(format!("profile view {i}: wb and gamma must be positive")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: GtToneProfile = serde_json::from_str(text).map_err(|e| Error::format("profile", e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl ViewProfile {
    /// Exact ground-truth tone map (clamped to the LDR range).
    pub fn apply(&self, hdr: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|c| gamma_curve(hdr[c] * self.wb[c], self.gamma).clamp(0.0, 1.0))
    }

    /// The curve sampled on the 256-knot table, for comparison and for
    /// rendering through the learned-parameter code path.
    pub fn tone_params(&self) -> ToneMapParams {
        let t = crf_from_fn(|x| gamma_curve(x, self.gamma));
        ToneMapParams {
            wb: self.wb,
            crf: [t, t, t],
            alpha: DEFAULT_ALPHA,
            frozen: false,
        }
    }
}

/// `x^(1/γ)` for `x ≥ 0`, 0 below.
pub fn gamma_curve(x: f64, gamma: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x.powf(1.0 / gamma)
    }
}
