//! Learning-rate schedules, the SH masking schedule and RMSProp.

use std::f64::consts::FRAC_PI_2;

/// `lr_init · (lr_final / lr_init)^(min(step, total) / total)`.
pub fn lr_exponential(step: u64, lr_init: f64, lr_final: f64, total_steps: u64) -> f64 {
    let t = step.min(total_steps) as f64 / total_steps.max(1) as f64;
    lr_init * (lr_final / lr_init).powf(t)
}

/// Exponential schedule scaled by a sine ramp from 1% to 100% over the first
/// `delay_steps`.
pub fn lr_delayed(step: u64, lr_init: f64, lr_final: f64, delay_steps: u64, total_steps: u64) -> f64 {
    lr_exponential(step, lr_init, lr_final, total_steps) * delay_ramp(step, delay_steps)
}

pub fn delay_ramp(step: u64, delay_steps: u64) -> f64 {
    if delay_steps == 0 {
        return 1.0;
    }
    let t = (step as f64 / delay_steps as f64).clamp(0.0, 1.0);
    0.01 + 0.99 * (FRAC_PI_2 * t).sin()
}

/// Fraction of the masked SH bands' gradient that is blocked in `epoch`.
pub fn sh_mask_rate(epoch: usize, sh_mask_epochs: usize) -> f64 {
    if sh_mask_epochs == 0 {
        return 0.0;
    }
    (1.0 - epoch as f64 / sh_mask_epochs as f64).max(0.0)
}

/// One RMSProp update of a single scalar. Returns the new parameter.
#[inline]
pub fn rmsprop_scalar(p: f64, g: f64, v: &mut f64, lr: f64, beta: f64, eps: f64) -> f64 {
    *v = beta * *v + (1.0 - beta) * g * g;
    let denom = v.sqrt() + eps;
    if denom == 0.0 {
        p
    } else {
        p - lr * g / denom
    }
}

/// `v ← βv + (1−β)g²; p ← p − lr·g/(√v + eps)` elementwise.
pub fn rmsprop_step(params: &mut [f64], grads: &[f64], v: &mut [f64], lr: f64, beta: f64, eps: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), v.len());
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(v.iter_mut()) {
        *p = rmsprop_scalar(*p, g, v, lr, beta, eps);
    }
}
