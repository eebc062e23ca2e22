//! Joint optimization of the voxel grid and the per-view tone-map
//! parameters.
//!
//! Each step draws a batch of training rays, renders them, tone-maps the
//! result per view, and back-propagates the masked reconstruction loss (plus
//! TV on the grid while the TV window is open, and CRF smoothness) into
//! RMSProp updates. The grid follows a coarse-to-fine ladder: at each
//! trigger step it is upsampled, pruned, and its optimizer state reset.
//!
//! Grid updates are sparse: only vertices touched by the batch are written,
//! and the second-moment decay they missed while untouched is applied
//! lazily (`β^k` for `k` skipped steps), which is the same update a dense
//! pass with zero gradients would have made.

pub mod calibration;
pub mod checkpoint;
pub mod config;
pub mod optim;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::field::sh::BAND_OF;
use crate::field::{VertexPayload, VoxelGrid, PAYLOAD_LEN, SH_COEFFS, SIGMA_SLOT};
use crate::io::Dataset;
use crate::losses::{pixel_mask, smooth_loss_backward, smooth_loss_table, tv_loss_backward, LossComponents, TvChannels};
use crate::render::{backward_ray, trace_ray, Camera, RayTrace, RenderOptions};
use crate::tonemap::{tonemap, tonemap_backward, ToneGrad, ToneMapParams, CRF_KNOTS};
use crate::{Error, Result};

pub use calibration::{dataset_stats, global_mean, init_white_balance, select_reference_view, ImageStats};
pub use checkpoint::TrainCheckpoint;
pub use config::{LadderStep, ToneMode, TrainConfig};
pub use optim::{delay_ramp, lr_delayed, lr_exponential, rmsprop_scalar, rmsprop_step, sh_mask_rate};

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub losses: LossComponents,
    pub total: f64,
    pub lr: f64,
    pub sigma_lr: f64,
    pub occupied: usize,
}

pub const LOG_HEADER: &str = "step,epoch,recon,tv_sigma,tv_sh,smooth,total,lr,sigma_lr,occupied";

impl StepLog {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.step, self.epoch, l.recon, l.tv_sigma, l.tv_sh, l.smooth, self.total, self.lr, self.sigma_lr, self.occupied
        )
    }
}

pub fn log_csv(rows: &[StepLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// RMSProp second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Flat, grid layout.
    pub grid_v: Vec<f64>,
    /// Step of each vertex's most recent update (for the lazy decay).
    pub grid_last: Vec<u64>,
    pub tone_v: Vec<ToneGrad>,
}

impl OptimizerState {
    pub fn new(vertex_count: usize, views: usize) -> Self {
        OptimizerState {
            grid_v: vec![0.0; vertex_count * PAYLOAD_LEN],
            grid_last: vec![0; vertex_count],
            tone_v: vec![ToneGrad::default(); views],
        }
    }

    pub fn reset_grid(&mut self, vertex_count: usize) {
        self.grid_v = vec![0.0; vertex_count * PAYLOAD_LEN];
        self.grid_last = vec![0; vertex_count];
    }

    pub fn is_valid(&self) -> bool {
        let ok = |v: &f64| v.is_finite() && *v >= 0.0;
        self.grid_v.iter().all(ok)
            && self
                .tone_v
                .iter()
                .all(|t| t.wb.iter().all(ok) && t.crf.iter().flatten().all(ok))
    }
}

/// A training ray: pixel of a view, its observed LDR value and loss weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolRay {
    pub view: u32,
    pub px: u32,
    pub py: u32,
    pub observed: [f64; 3],
    pub mask: f64,
}

/// Loss value and full gradient of the training objective.
#[derive(Debug, Clone)]
pub struct ObjectiveGrad {
    pub losses: LossComponents,
    pub total: f64,
    /// Flat, grid layout.
    pub grid: Vec<f64>,
    pub tone: Vec<ToneGrad>,
}

/// The training objective over an explicit ray set, with gradients for
/// every parameter group, evaluated by the same code path as a training
/// step. `with_tv` adds the grid TV terms.
pub fn objective(
    grid: &VoxelGrid,
    tone: &[ToneMapParams],
    cameras: &[Camera],
    rays: &[PoolRay],
    cfg: &TrainConfig,
    opts: &RenderOptions,
    with_tv: bool,
) -> Result<ObjectiveGrad> {
    if rays.is_empty() {
        return Err(Error::invalid("objective needs at least one ray"));
    }
    let mut acc = Accum::new(grid.vertex_count(), tone.len());
    let inv = 1.0 / rays.len() as f64;
    for r in rays {
        accumulate_ray(grid, tone, cameras, r, cfg, opts, inv, &mut acc);
    }
    let w = &cfg.weights;
    let mut losses = LossComponents {
        recon: acc.recon,
        ..Default::default()
    };
    if with_tv {
        losses.tv_sigma = tv_loss_backward(grid, TvChannels::Sigma, w.tv_epsilon, w.lambda_tv_sigma, &mut acc.grad);
        losses.tv_sh = tv_loss_backward(grid, TvChannels::Sh, w.tv_epsilon, w.lambda_tv_sh, &mut acc.grad);
    }
    if cfg.tone_mode == ToneMode::Full {
        losses.smooth = smooth_term(tone, cfg, w.lambda_smooth, &mut acc.tone);
    }
    let total = crate::losses::total_loss(&losses, w)?;
    Ok(ObjectiveGrad {
        losses,
        total,
        grid: acc.grad,
        tone: acc.tone,
    })
}

/// Gradient accumulator for one slice of a batch.
struct Accum {
    grad: Vec<f64>,
    touched: Vec<u32>,
    flag: Vec<bool>,
    tone: Vec<ToneGrad>,
    tone_touched: Vec<bool>,
    recon: f64,
    trace: RayTrace,
}

impl Accum {
    fn new(vertex_count: usize, views: usize) -> Self {
        Accum {
            grad: vec![0.0; vertex_count * PAYLOAD_LEN],
            touched: Vec::new(),
            flag: vec![false; vertex_count],
            tone: vec![ToneGrad::default(); views],
            tone_touched: vec![false; views],
            recon: 0.0,
            trace: RayTrace::default(),
        }
    }

    fn touch(&mut self, idx: usize) {
        if !self.flag[idx] {
            self.flag[idx] = true;
            self.touched.push(idx as u32);
        }
    }

    fn clear(&mut self) {
        for &i in &self.touched {
            let i = i as usize;
            self.flag[i] = false;
            self.grad[i * PAYLOAD_LEN..(i + 1) * PAYLOAD_LEN].fill(0.0);
        }
        self.touched.clear();
        for (t, seen) in self.tone.iter_mut().zip(self.tone_touched.iter_mut()) {
            if *seen {
                t.clear();
                *seen = false;
            }
        }
        self.recon = 0.0;
    }
}

pub struct Trainer {
    config: TrainConfig,
    grid: VoxelGrid,
    tone: Vec<ToneMapParams>,
    view_ids: Vec<String>,
    cameras: Vec<Camera>,
    reference: usize,
    step: u64,
    opt: OptimizerState,
    initial_loss: Option<f64>,
    pool: Vec<PoolRay>,
    perm: Option<(u64, Vec<u32>)>,
    accums: Vec<Accum>,
    flip_sigma_adjoint: bool,
}

impl Trainer {
    /// Fresh model: initialized grid, white balance from image means and a
    /// frozen reference view.
    pub fn new(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if dataset.views.is_empty() {
            return Err(Error::invalid("dataset has no views"));
        }
        let mut init = VertexPayload {
            sigma: config.init_sigma,
            ..VertexPayload::ZERO
        };
        if config.fold_offset_into_dc {
            for c in 0..3 {
                init.sh[c][0] = config.color_offset / crate::field::sh::C0;
            }
        }
        let grid = VoxelGrid::filled(config.init_resolution, dataset.bounds, &init)?;
        let stats = dataset_stats(dataset);
        let wb = if config.init_white_balance {
            let e = config.init_wb_exponent;
            init_white_balance(&stats)?.into_iter().map(|w| w.map(|x| x.powf(e))).collect()
        } else {
            vec![[1.0; 3]; stats.len()]
        };
        let reference = match dataset.reference_view {
            Some(r) => r,
            None => select_reference_view(&stats),
        };
        let tone = wb
            .iter()
            .enumerate()
            .map(|(i, &wb)| {
                let mut p = ToneMapParams::identity(config.alpha);
                if config.init_crf_gamma != 1.0 {
                    let g = config.init_crf_gamma;
                    let t = crate::tonemap::crf_from_fn(|x| x.max(0.0).powf(1.0 / g));
                    p.crf = [t.map(|x| if config.f32_params { x as f32 as f64 } else { x }); 3];
                }
                p.wb = wb.map(|w| if config.f32_params { w as f32 as f64 } else { w });
                p.frozen = i == reference;
                p.project();
                p
            })
            .collect();
        let state = TrainCheckpoint {
            config,
            step: 0,
            reference,
            initial_loss: None,
            view_ids: dataset.views.iter().map(|v| v.id.clone()).collect(),
            cameras: dataset.views.iter().map(|v| v.camera.clone()).collect(),
            tone,
            grid,
            optimizer: None,
        };
        Self::resume(dataset, state)
    }

    /// Continues from a checkpoint; the dataset must hold the same views.
    pub fn resume(dataset: &Dataset, ck: TrainCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        let ids: Vec<&str> = dataset.views.iter().map(|v| v.id.as_str()).collect();
        if ids.len() != ck.view_ids.len() || ids.iter().zip(&ck.view_ids).any(|(a, b)| *a != b) {
            return Err(Error::invalid("checkpoint views do not match the dataset"));
        }
        let w = &ck.config.weights;
        let mut pool = Vec::new();
        for (vi, v) in dataset.views.iter().enumerate() {
            for (i, &m) in v.train_mask.iter().enumerate() {
                if !m {
                    continue;
                }
                let observed = v.ldr.pixel(i);
                let mask = if ck.config.use_saturation_mask {
                    pixel_mask(observed, w.mask_low, w.mask_high)
                } else {
                    1.0
                };
                pool.push(PoolRay {
                    view: vi as u32,
                    px: i as u32 % v.ldr.width,
                    py: i as u32 / v.ldr.width,
                    observed,
                    mask,
                });
            }
        }
        if pool.is_empty() {
            return Err(Error::invalid("dataset has no trainable pixels"));
        }
        let n = ck.grid.vertex_count();
        let views = ck.tone.len();
        let opt = match ck.optimizer {
            Some(o) => {
                if o.grid_v.len() != n * PAYLOAD_LEN || o.grid_last.len() != n || o.tone_v.len() != views {
                    return Err(Error::invalid("optimizer state does not match the model"));
                }
                o
            }
            None => OptimizerState::new(n, views),
        };
        Ok(Trainer {
            config: ck.config,
            grid: ck.grid,
            tone: ck.tone,
            view_ids: ck.view_ids,
            cameras: ck.cameras,
            reference: ck.reference,
            step: ck.step,
            opt,
            initial_loss: ck.initial_loss,
            pool,
            perm: None,
            accums: Vec::new(),
            flip_sigma_adjoint: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn tone(&self) -> &[ToneMapParams] {
        &self.tone
    }

    pub fn view_ids(&self) -> &[String] {
        &self.view_ids
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        (self.step / self.config.iters_per_epoch) as usize
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps()
    }

    #[doc(hidden)]
    pub fn set_flip_sigma_adjoint(&mut self, flip: bool) {
        self.flip_sigma_adjoint = flip;
    }

    pub fn render_options(&self) -> RenderOptions {
        render_options(&self.config, &self.grid)
    }

    pub fn checkpoint(&self) -> TrainCheckpoint {
        TrainCheckpoint {
            config: self.config.clone(),
            step: self.step,
            reference: self.reference,
            initial_loss: self.initial_loss,
            view_ids: self.view_ids.clone(),
            cameras: self.cameras.clone(),
            tone: self.tone.clone(),
            grid: self.grid.clone(),
            optimizer: Some(self.opt.clone()),
        }
    }

    /// Pool indices of the rays in the current step's batch. Ray slots are
    /// consumed as consecutive passes over the pool, each pass a fresh
    /// permutation seeded by `(seed, pass)`, so the batch depends only on
    /// the step number.
    fn batch(&mut self) -> Vec<u32> {
        let b = self.config.rays_per_batch as u64;
        let p = self.pool.len() as u64;
        let mut out = Vec::with_capacity(b as usize);
        for slot in self.step * b..(self.step + 1) * b {
            let pass = slot / p;
            if self.perm.as_ref().map(|(q, _)| *q) != Some(pass) {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ pass.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut perm: Vec<u32> = (0..p as u32).collect();
                perm.shuffle(&mut rng);
                self.perm = Some((pass, perm));
            }
            out.push(self.perm.as_ref().unwrap().1[(slot % p) as usize]);
        }
        out
    }

    /// One optimization step.
    pub fn step(&mut self) -> Result<StepLog> {
        let cfg = self.config.clone();
        let epoch = self.epoch();
        let batch = self.batch();
        let n = self.grid.vertex_count();
        let views = self.tone.len();
        let chunks = if cfg.deterministic {
            1
        } else {
            rayon::current_num_threads().clamp(1, batch.len())
        };
        if self.accums.len() != chunks || self.accums[0].flag.len() != n {
            self.accums = (0..chunks).map(|_| Accum::new(n, views)).collect();
        }
        let mut opts = self.render_options();
        opts.flip_sigma_adjoint = self.flip_sigma_adjoint;
        let inv = 1.0 / batch.len() as f64;
        {
            let grid = &self.grid;
            let tone = &self.tone;
            let cameras = &self.cameras;
            let pool = &self.pool;
            let per = batch.len().div_ceil(chunks);
            let work = |(acc, rays): (&mut Accum, &[u32])| {
                for &ri in rays {
                    accumulate_ray(grid, tone, cameras, &pool[ri as usize], &cfg, &opts, inv, acc);
                }
            };
            if chunks == 1 {
                work((&mut self.accums[0], &batch[..]));
            } else {
                self.accums.par_iter_mut().zip(batch.par_chunks(per)).for_each(work);
            }
        }
        // Reduce into the first accumulator, in chunk order.
        let (head, rest) = self.accums.split_at_mut(1);
        let acc = &mut head[0];
        for other in rest.iter_mut() {
            for &i in &other.touched {
                let i = i as usize;
                acc.touch(i);
                for s in 0..PAYLOAD_LEN {
                    acc.grad[i * PAYLOAD_LEN + s] += other.grad[i * PAYLOAD_LEN + s];
                }
            }
            for v in 0..views {
                if other.tone_touched[v] {
                    acc.tone_touched[v] = true;
                    add_tone(&mut acc.tone[v], &other.tone[v]);
                }
            }
            acc.recon += other.recon;
            other.clear();
        }

        let mut losses = LossComponents {
            recon: acc.recon,
            ..Default::default()
        };
        let w = &cfg.weights;
        if epoch < cfg.tv_epochs {
            losses.tv_sigma = tv_loss_backward(&self.grid, TvChannels::Sigma, w.tv_epsilon, w.lambda_tv_sigma, &mut acc.grad);
            losses.tv_sh = tv_loss_backward(&self.grid, TvChannels::Sh, w.tv_epsilon, w.lambda_tv_sh, &mut acc.grad);
            for i in 0..n {
                if self.grid.is_occupied(i) {
                    acc.touch(i);
                }
            }
        }
        if cfg.tone_mode == ToneMode::Full {
            losses.smooth = smooth_term(&self.tone, &cfg, w.lambda_smooth, &mut acc.tone);
            acc.tone_touched.iter_mut().for_each(|t| *t = true);
        }
        let total = crate::losses::total_loss(&losses, w)?;
        let initial = *self.initial_loss.get_or_insert(total);
        if total > cfg.divergence_factor * initial {
            let (name, value) = losses
                .named()
                .into_iter()
                .zip([1.0, w.lambda_tv_sigma, w.lambda_tv_sh, w.lambda_smooth])
                .map(|((name, v), lambda)| (name, v * lambda))
                .fold(("recon", f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            acc.clear();
            return Err(Error::Divergence {
                step: self.step,
                component: format!("{name} (weighted {value:.6e}, total {total:.6e})"),
                value: total,
                initial,
            });
        }

        // Gradient sanity.
        for &i in &acc.touched {
            let g = &acc.grad[i as usize * PAYLOAD_LEN..(i as usize + 1) * PAYLOAD_LEN];
            if let Some(s) = g.iter().position(|v| !v.is_finite()) {
                let group = if s == SIGMA_SLOT { "sigma" } else { "sh" };
                acc.clear();
                return Err(Error::NonFinite {
                    group: format!("{group} gradient at vertex {i}"),
                });
            }
        }
        for (v, t) in acc.tone.iter().enumerate() {
            let bad = if !t.wb.iter().all(|x| x.is_finite()) {
                Some("wb")
            } else if !t.crf.iter().flatten().all(|x| x.is_finite()) {
                Some("crf")
            } else {
                None
            };
            if let Some(group) = bad {
                let id = self.view_ids[v].clone();
                acc.clear();
                return Err(Error::NonFinite {
                    group: format!("{group} gradient of view {id}"),
                });
            }
        }

        let lr = lr_exponential(self.step, cfg.lr_init, cfg.lr_final, cfg.total_lr_steps);
        let sigma_lr = lr_delayed(
            self.step,
            cfg.sigma_lr_init,
            cfg.sigma_lr_final,
            cfg.sigma_lr_delay_steps,
            cfg.total_lr_steps,
        );
        let keep = 1.0 - sh_mask_rate(epoch, cfg.sh_mask_epochs);
        let (beta, eps) = (cfg.rms_beta, cfg.rms_eps);
        let round = |x: f64| if cfg.f32_params { x as f32 as f64 } else { x };

        // Grid update over touched vertices.
        let data = self.grid.data_mut();
        for &i in &acc.touched {
            let i = i as usize;
            let skipped = self.step.saturating_sub(self.opt.grid_last[i] + 1);
            let decay = if skipped == 0 { 1.0 } else { beta.powi(skipped.min(i32::MAX as u64) as i32) };
            self.opt.grid_last[i] = self.step;
            let base = i * PAYLOAD_LEN;
            for s in 0..PAYLOAD_LEN {
                let mut g = acc.grad[base + s];
                let rate = if s == SIGMA_SLOT {
                    sigma_lr
                } else {
                    if BAND_OF[s % SH_COEFFS] >= cfg.sh_mask_min_band {
                        g *= keep;
                    }
                    lr
                };
                let v = &mut self.opt.grid_v[base + s];
                *v *= decay;
                data[base + s] = round(rmsprop_scalar(data[base + s], g, v, rate, beta, eps));
            }
        }

        // Tone update (dense, every view every step).
        if cfg.tone_mode == ToneMode::Full {
            if cfg.shared_crf {
                // Tied curves: one update from the summed gradient, stored
                // with view 0's optimizer state.
                let (first, rest) = acc.tone.split_first_mut().expect("at least one view");
                for g in rest.iter_mut() {
                    for c in 0..3 {
                        for k in 0..CRF_KNOTS {
                            first.crf[c][k] += std::mem::take(&mut g.crf[c][k]);
                        }
                    }
                }
            }
            for (v, p) in self.tone.iter_mut().enumerate() {
                let g = &acc.tone[v];
                let st = &mut self.opt.tone_v[v];
                if !p.frozen {
                    for c in 0..3 {
                        p.wb[c] = round(rmsprop_scalar(p.wb[c], g.wb[c], &mut st.wb[c], lr, beta, eps));
                    }
                }
                if !(p.frozen && cfg.freeze_reference_crf) && (v == 0 || !cfg.shared_crf) {
                    let crf_lr = lr * cfg.crf_lr_scale;
                    for c in 0..3 {
                        for k in 1..CRF_KNOTS - 1 {
                            p.crf[c][k] = round(rmsprop_scalar(p.crf[c][k], g.crf[c][k], &mut st.crf[c][k], crf_lr, beta, eps));
                        }
                    }
                }
                p.project();
            }
            if cfg.shared_crf {
                let crf = self.tone[0].crf.clone();
                for p in &mut self.tone[1..] {
                    p.crf.clone_from(&crf);
                }
            }
        }
        acc.clear();

        let log = StepLog {
            step: self.step,
            epoch,
            losses,
            total,
            lr,
            sigma_lr,
            occupied: self.grid.occupied_count(),
        };
        self.step += 1;
        for l in cfg.ladder.iter().filter(|l| l.at_step == self.step) {
            self.grid = self.grid.upsample(l.resolution)?.prune(cfg.prune_tau)?;
            self.opt.reset_grid(self.grid.vertex_count());
            self.accums.clear();
        }
        Ok(log)
    }

    /// Runs until `total_steps()` (or `max_steps` more steps), calling
    /// `on_step` after every step.
    pub fn run(&mut self, max_steps: Option<u64>, mut on_step: impl FnMut(&Trainer, &StepLog) -> Result<()>) -> Result<Vec<StepLog>> {
        let end = match max_steps {
            Some(m) => (self.step + m).min(self.config.total_steps()),
            None => self.config.total_steps(),
        };
        let mut logs = Vec::with_capacity(end.saturating_sub(self.step) as usize);
        while self.step < end {
            let row = self.step()?;
            on_step(self, &row)?;
            logs.push(row);
        }
        Ok(logs)
    }
}

/// CRF smoothness over every view's tables, or over the single table when
/// curves are shared (its gradient lands on view 0).
fn smooth_term(tone: &[ToneMapParams], cfg: &TrainConfig, lambda: f64, grads: &mut [ToneGrad]) -> f64 {
    let n = if cfg.shared_crf { 1 } else { tone.len() };
    let mut total = 0.0;
    for (p, g) in tone.iter().zip(grads.iter_mut()).take(n) {
        for c in 0..3 {
            total += smooth_loss_table(&p.crf[c]);
            smooth_loss_backward(&p.crf[c], lambda, &mut g.crf[c]);
        }
    }
    total
}

pub fn render_options(cfg: &TrainConfig, grid: &VoxelGrid) -> RenderOptions {
    let mut o = RenderOptions::for_grid(grid);
    if cfg.step_size > 0.0 {
        o.step = cfg.step_size;
    }
    o.t_cutoff = cfg.t_cutoff;
    o.color_offset = if cfg.fold_offset_into_dc { 0.0 } else { cfg.color_offset };
    o
}

fn add_tone(dst: &mut ToneGrad, src: &ToneGrad) {
    for c in 0..3 {
        dst.wb[c] += src.wb[c];
        for k in 0..CRF_KNOTS {
            dst.crf[c][k] += src.crf[c][k];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_ray(
    grid: &VoxelGrid,
    tone: &[ToneMapParams],
    cameras: &[Camera],
    ray: &PoolRay,
    cfg: &TrainConfig,
    opts: &RenderOptions,
    inv: f64,
    acc: &mut Accum,
) {
    let v = ray.view as usize;
    let r = cameras[v].generate_ray(ray.px as f64, ray.py as f64, &grid.bounds());
    let hdr = trace_ray(grid, &r, opts, &mut acc.trace);
    let pred = match cfg.tone_mode {
        ToneMode::Full => tonemap(hdr, &tone[v]),
        ToneMode::None => hdr,
    };
    let mut d_pred = [0.0; 3];
    for c in 0..3 {
        let res = pred[c] - ray.observed[c];
        acc.recon += ray.mask * res * res * inv;
        d_pred[c] = 2.0 * ray.mask * res * inv;
    }
    let d_hdr = match cfg.tone_mode {
        ToneMode::Full => {
            let g = tonemap_backward(hdr, &tone[v], d_pred);
            acc.tone[v].add(&g);
            acc.tone_touched[v] = true;
            g.d_input
        }
        ToneMode::None => d_pred,
    };
    if acc.trace.sample_count() == 0 {
        return;
    }
    backward_ray(grid, &acc.trace, d_hdr, opts, &mut acc.grad);
    let trace = std::mem::take(&mut acc.trace);
    trace.for_each_vertex(|i| {
        if grid.is_occupied(i) {
            acc.touch(i);
        }
    });
    acc.trace = trace;
}
