//! Training configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! preset = desk            # optional; must come first, other keys override it
//! epochs = 10
//! iters_per_epoch = 2000
//! rays_per_batch = 1024
//! init_resolution = 16x16x16
//! ladder = 32x32x32@6000, 64x64x64@12000
//! ```
//!
//! Every field of [`TrainConfig`] is a key; [`TrainConfig::to_text`] emits
//! all of them.

use std::fmt::Write as _;

use crate::losses::LossWeights;
use crate::{Error, Result};

/// How rendered HDR values become LDR predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToneMode {
    /// White balance then learnable response curve.
    Full,
    /// No tone mapping: the HDR render is compared to the LDR image directly.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LadderStep {
    pub resolution: [usize; 3],
    /// Iteration (global step) at which the grid is upsampled.
    pub at_step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iters_per_epoch: u64,
    pub rays_per_batch: usize,
    /// Learning rate of SH coefficients and tone-map parameters.
    pub lr_init: f64,
    pub lr_final: f64,
    pub sigma_lr_init: f64,
    pub sigma_lr_final: f64,
    pub sigma_lr_delay_steps: u64,
    pub total_lr_steps: u64,
    pub rms_beta: f64,
    pub rms_eps: f64,
    pub weights: LossWeights,
    pub alpha: f64,
    /// Ray-marching step in world units; 0 selects half the smallest voxel
    /// edge of the current grid.
    pub step_size: f64,
    pub t_cutoff: f64,
    pub init_resolution: [usize; 3],
    pub init_sigma: f64,
    pub ladder: Vec<LadderStep>,
    pub prune_tau: f64,
    pub tv_epochs: usize,
    pub sh_mask_epochs: usize,
    /// Lowest SH band affected by masking (1 masks l = 1, 2; 2 masks l = 2).
    pub sh_mask_min_band: usize,
    pub color_offset: f64,
    /// Fold the grey offset into the DC coefficient at initialization
    /// instead of adding it at evaluation time.
    pub fold_offset_into_dc: bool,
    pub tone_mode: ToneMode,
    pub use_saturation_mask: bool,
    pub init_white_balance: bool,
    /// The initial gains are the mean ratios raised to this power; 1 uses
    /// the ratios as they are, larger values undo an assumed display gamma.
    pub init_wb_exponent: f64,
    /// Initial response curves are `x^(1/init_crf_gamma)`; 1 is the
    /// identity.
    pub init_crf_gamma: f64,
    /// Also freeze the reference view's response curves (not only its
    /// white balance).
    pub freeze_reference_crf: bool,
    /// One response curve per channel shared by all views (a single
    /// camera); white balance stays per view.
    pub shared_crf: bool,
    /// Multiplier on the tone learning rate for CRF knots only.
    pub crf_lr_scale: f64,
    /// Round parameters to f32 after every update so that checkpoints are
    /// lossless.
    pub f32_params: bool,
    pub divergence_factor: f64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Desk-scale schedule: 6 epochs × 1000 iterations, 16³ → 32³ → 64³;
    /// a few minutes on one core for 20 views of 64×64.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 6,
            iters_per_epoch: 1000,
            rays_per_batch: 1024,
            lr_init: 1e-2,
            lr_final: 5e-5,
            sigma_lr_init: 10.0,
            sigma_lr_final: 5e-2,
            sigma_lr_delay_steps: 500,
            total_lr_steps: 6000,
            rms_beta: 0.95,
            rms_eps: 1e-8,
            weights: LossWeights::default(),
            alpha: crate::tonemap::DEFAULT_ALPHA,
            step_size: 0.0,
            t_cutoff: 1e-5,
            init_resolution: [16, 16, 16],
            init_sigma: crate::field::INIT_SIGMA,
            ladder: vec![
                LadderStep {
                    resolution: [32, 32, 32],
                    at_step: 1500,
                },
                LadderStep {
                    resolution: [64, 64, 64],
                    at_step: 3000,
                },
            ],
            prune_tau: 1e-3,
            tv_epochs: 2,
            sh_mask_epochs: 3,
            sh_mask_min_band: 1,
            color_offset: crate::field::DEFAULT_COLOR_OFFSET,
            fold_offset_into_dc: false,
            tone_mode: ToneMode::Full,
            use_saturation_mask: true,
            init_white_balance: true,
            init_wb_exponent: 1.0,
            init_crf_gamma: 1.0,
            freeze_reference_crf: false,
            shared_crf: false,
            crf_lr_scale: 1.0,
            f32_params: true,
            divergence_factor: 10.0,
            checkpoint_every: 0,
            seed: 0,
            deterministic: true,
        }
    }

    /// 8³ grid, 200 steps.
    pub fn smoke() -> Self {
        TrainConfig {
            epochs: 1,
            iters_per_epoch: 200,
            rays_per_batch: 256,
            total_lr_steps: 200,
            sigma_lr_delay_steps: 20,
            init_resolution: [8, 8, 8],
            ladder: Vec::new(),
            tv_epochs: 1,
            sh_mask_epochs: 0,
            ..TrainConfig::desk()
        }
    }

    /// The full-size schedule of the original method (hours of compute).
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 10,
            iters_per_epoch: 128_000,
            rays_per_batch: 5000,
            sigma_lr_init: 3e1,
            sigma_lr_delay_steps: 15_000,
            total_lr_steps: 250_000,
            init_resolution: [128, 128, 64],
            ladder: vec![
                LadderStep {
                    resolution: [256, 256, 128],
                    at_step: 25_600,
                },
                LadderStep {
                    resolution: [512, 512, 256],
                    at_step: 51_200,
                },
                LadderStep {
                    resolution: [800, 800, 512],
                    at_step: 76_800,
                },
            ],
            tv_epochs: 3,
            sh_mask_epochs: 5,
            ..TrainConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "smoke" => Ok(Self::smoke()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::invalid(format!("unknown preset {other:?}"))),
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs as u64 * self.iters_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if self.rays_per_batch == 0 || self.iters_per_epoch == 0 {
            return fail("rays_per_batch and iters_per_epoch must be >= 1");
        }
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_init) {
            return fail("need 0 < lr_final <= lr_init");
        }
        if !(self.sigma_lr_final > 0.0 && self.sigma_lr_final <= self.sigma_lr_init) {
            return fail("need 0 < sigma_lr_final <= sigma_lr_init");
        }
        if self.total_lr_steps == 0 || self.sigma_lr_delay_steps > self.total_lr_steps {
            return fail("need total_lr_steps > 0 and sigma_lr_delay_steps <= total_lr_steps");
        }
        if !(self.rms_beta > 0.0 && self.rms_beta < 1.0 && self.rms_eps >= 0.0) {
            return fail("need 0 < rms_beta < 1 and rms_eps >= 0");
        }
        self.weights.validate()?;
        if !(self.alpha > 0.0) || !(self.step_size >= 0.0) || !(self.prune_tau >= 0.0) {
            return fail("alpha must be positive; step_size and prune_tau nonnegative");
        }
        if self.init_resolution.iter().any(|&r| r == 0) {
            return fail("init_resolution must be positive");
        }
        let mut prev = self.init_resolution;
        let mut prev_step = 0;
        for l in &self.ladder {
            if (0..3).any(|a| l.resolution[a] < prev[a]) || l.at_step < prev_step {
                return fail("ladder resolutions and trigger steps must be nondecreasing");
            }
            prev = l.resolution;
            prev_step = l.at_step;
        }
        if !(1..=2).contains(&self.sh_mask_min_band) {
            return fail("sh_mask_min_band must be 1 or 2");
        }
        if !(self.crf_lr_scale >= 0.0 && self.crf_lr_scale.is_finite()) {
            return fail("crf_lr_scale must be nonnegative");
        }
        if !(self.init_wb_exponent > 0.0 && self.init_wb_exponent.is_finite())
            || !(self.init_crf_gamma > 0.0 && self.init_crf_gamma.is_finite())
        {
            return fail("init_wb_exponent and init_crf_gamma must be positive");
        }
        if self.shared_crf && self.freeze_reference_crf {
            return fail("shared_crf and freeze_reference_crf exclude each other");
        }
        if !(self.divergence_factor > 1.0) {
            return fail("divergence_factor must exceed 1");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("epochs", self.epochs.to_string());
        kv("iters_per_epoch", self.iters_per_epoch.to_string());
        kv("rays_per_batch", self.rays_per_batch.to_string());
        kv("lr_init", self.lr_init.to_string());
        kv("lr_final", self.lr_final.to_string());
        kv("sigma_lr_init", self.sigma_lr_init.to_string());
        kv("sigma_lr_final", self.sigma_lr_final.to_string());
        kv("sigma_lr_delay_steps", self.sigma_lr_delay_steps.to_string());
        kv("total_lr_steps", self.total_lr_steps.to_string());
        kv("rms_beta", self.rms_beta.to_string());
        kv("rms_eps", self.rms_eps.to_string());
        kv("lambda_tv_sigma", w.lambda_tv_sigma.to_string());
        kv("lambda_tv_sh", w.lambda_tv_sh.to_string());
        kv("lambda_smooth", w.lambda_smooth.to_string());
        kv("tv_epsilon", w.tv_epsilon.to_string());
        kv("mask_low", w.mask_low.to_string());
        kv("mask_high", w.mask_high.to_string());
        kv("alpha", self.alpha.to_string());
        kv("step_size", self.step_size.to_string());
        kv("t_cutoff", self.t_cutoff.to_string());
        kv("init_resolution", fmt_res(self.init_resolution));
        kv("init_sigma", self.init_sigma.to_string());
        kv(
            "ladder",
            self.ladder
                .iter()
                .map(|l| format!("{}@{}", fmt_res(l.resolution), l.at_step))
                .collect::<Vec<_>>()
                .join(", "),
        );
        kv("prune_tau", self.prune_tau.to_string());
        kv("tv_epochs", self.tv_epochs.to_string());
        kv("sh_mask_epochs", self.sh_mask_epochs.to_string());
        kv("sh_mask_min_band", self.sh_mask_min_band.to_string());
        kv("color_offset", self.color_offset.to_string());
        kv("fold_offset_into_dc", self.fold_offset_into_dc.to_string());
        kv(
            "tone_mode",
            match self.tone_mode {
                ToneMode::Full => "full",
                ToneMode::None => "none",
            }
            .into(),
        );
        kv("use_saturation_mask", self.use_saturation_mask.to_string());
        kv("init_white_balance", self.init_white_balance.to_string());
        kv("init_wb_exponent", self.init_wb_exponent.to_string());
        kv("init_crf_gamma", self.init_crf_gamma.to_string());
        kv("freeze_reference_crf", self.freeze_reference_crf.to_string());
        kv("shared_crf", self.shared_crf.to_string());
        kv("crf_lr_scale", self.crf_lr_scale.to_string());
        kv("f32_params", self.f32_params.to_string());
        kv("divergence_factor", self.divergence_factor.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("seed", self.seed.to_string());
        kv("deterministic", self.deterministic.to_string());
        s
    }

    /// Parses `key = value` lines on top of `base` (or a `preset = ...`
    /// line, which must precede all other keys).
    pub fn from_text(text: &str, base: TrainConfig) -> Result<Self> {
        let mut c = base;
        let mut seen_other = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format("config", format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let err = |d: String| Error::format("config", format!("line {} ({key}): {d}", lineno + 1));
            if key == "preset" {
                if seen_other {
                    return Err(err("preset must come before other keys".into()));
                }
                c = TrainConfig::preset(value).map_err(|e| err(e.to_string()))?;
                continue;
            }
            seen_other = true;
            c.set(key, value).map_err(err)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn p<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        let w = &mut self.weights;
        match key {
            "epochs" => self.epochs = p(value)?,
            "iters_per_epoch" => self.iters_per_epoch = p(value)?,
            "rays_per_batch" => self.rays_per_batch = p(value)?,
            "lr_init" => self.lr_init = p(value)?,
            "lr_final" => self.lr_final = p(value)?,
            "sigma_lr_init" => self.sigma_lr_init = p(value)?,
            "sigma_lr_final" => self.sigma_lr_final = p(value)?,
            "sigma_lr_delay_steps" => self.sigma_lr_delay_steps = p(value)?,
            "total_lr_steps" => self.total_lr_steps = p(value)?,
            "rms_beta" => self.rms_beta = p(value)?,
            "rms_eps" => self.rms_eps = p(value)?,
            "lambda_tv_sigma" => w.lambda_tv_sigma = p(value)?,
            "lambda_tv_sh" => w.lambda_tv_sh = p(value)?,
            "lambda_smooth" => w.lambda_smooth = p(value)?,
            "tv_epsilon" => w.tv_epsilon = p(value)?,
            "mask_low" => w.mask_low = p(value)?,
            "mask_high" => w.mask_high = p(value)?,
            "alpha" => self.alpha = p(value)?,
            "step_size" => self.step_size = p(value)?,
            "t_cutoff" => self.t_cutoff = p(value)?,
            "init_resolution" => self.init_resolution = parse_res(value)?,
            "init_sigma" => self.init_sigma = p(value)?,
            "ladder" => {
                self.ladder = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|item| {
                        let (r, at) = item
                            .split_once('@')
                            .ok_or_else(|| format!("ladder entry {item:?} needs RESxRESxRES@STEP"))?;
                        Ok(LadderStep {
                            resolution: parse_res(r.trim())?,
                            at_step: p(at.trim())?,
                        })
                    })
                    .collect::<std::result::Result<_, String>>()?
            }
            "prune_tau" => self.prune_tau = p(value)?,
            "tv_epochs" => self.tv_epochs = p(value)?,
            "sh_mask_epochs" => self.sh_mask_epochs = p(value)?,
            "sh_mask_min_band" => self.sh_mask_min_band = p(value)?,
            "color_offset" => self.color_offset = p(value)?,
            "fold_offset_into_dc" => self.fold_offset_into_dc = p(value)?,
            "tone_mode" => {
                self.tone_mode = match value {
                    "full" => ToneMode::Full,
                    "none" => ToneMode::None,
                    o => return Err(format!("unknown tone_mode {o:?}")),
                }
            }
            "use_saturation_mask" => self.use_saturation_mask = p(value)?,
            "init_white_balance" => self.init_white_balance = p(value)?,
            "init_wb_exponent" => self.init_wb_exponent = p(value)?,
            "init_crf_gamma" => self.init_crf_gamma = p(value)?,
            "freeze_reference_crf" => self.freeze_reference_crf = p(value)?,
            "shared_crf" => self.shared_crf = p(value)?,
            "crf_lr_scale" => self.crf_lr_scale = p(value)?,
            "f32_params" => self.f32_params = p(value)?,
            "divergence_factor" => self.divergence_factor = p(value)?,
            "checkpoint_every" => self.checkpoint_every = p(value)?,
            "seed" => self.seed = p(value)?,
            "deterministic" => self.deterministic = p(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}

fn fmt_res(r: [usize; 3]) -> String {
    format!("{}x{}x{}", r[0], r[1], r[2])
}

fn parse_res(v: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = v.split('x').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("resolution {v:?} must look like 64x64x64"));
    }
    let mut out = [0; 3];
    for (o, s) in out.iter_mut().zip(parts) {
        *o = s.parse().map_err(|_| format!("bad resolution component {s:?}"))?;
    }
    Ok(out)
}
