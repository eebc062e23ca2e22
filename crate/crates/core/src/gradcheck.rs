//! Finite-difference verification of every analytic gradient of the
//! training objective: opacity, SH coefficients, white balance and CRF
//! knots.
//!
//! The check builds a small random problem (8³ grid, 4 views of 8×8 pixels
//! with random LDR targets), evaluates the objective once with gradients,
//! and compares sampled entries against central differences. The objective
//! is piecewise smooth (CRF knots, clamps); a probe whose central difference
//! changes between step sizes straddles a kink and is replaced by another
//! sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{VoxelGrid, PAYLOAD_LEN, SIGMA_SLOT};
use crate::math::Aabb;
use crate::render::{Camera, RenderOptions};
use crate::tonemap::{ToneMapParams, CRF_KNOTS};
use crate::trainer::{objective, PoolRay, TrainConfig};
use crate::Result;

pub const GROUPS: [&str; 4] = ["sigma", "sh", "wb", "crf"];
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub resolution: usize,
    pub views: usize,
    pub image_size: u32,
    pub probes_per_group: usize,
    pub step: f64,
    pub seed: u64,
    /// Test hook: negates the sigma adjoint so the check must fail.
    pub flip_sigma_adjoint: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            resolution: 8,
            views: 4,
            image_size: 8,
            probes_per_group: 40,
            step: 1e-6,
            seed: 7,
            flip_sigma_adjoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub group: &'static str,
    pub probes: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// Parameter with the largest error, e.g. `vertex 12 slot 27`.
    pub worst: String,
}

impl GroupResult {
    pub fn passed(&self) -> bool {
        self.probes > 0 && self.max_rel_error < TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(GroupResult::passed)
    }

    pub fn worst(&self) -> &GroupResult {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("at least one group")
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<6} {:>6} {:>6} {:>12}  {:<6} worst\n", "group", "probes", "kinks", "max_rel_err", "status");
        for g in &self.groups {
            s.push_str(&format!(
                "{:<6} {:>6} {:>6} {:>12.3e}  {:<6} {}\n",
                g.group,
                g.probes,
                g.skipped_kinks,
                g.max_rel_error,
                if g.passed() { "PASS" } else { "FAIL" },
                g.worst
            ));
        }
        s
    }
}

/// The random test problem.
pub struct Problem {
    pub grid: VoxelGrid,
    pub tone: Vec<ToneMapParams>,
    pub cameras: Vec<Camera>,
    pub rays: Vec<PoolRay>,
    pub config: TrainConfig,
    pub opts: RenderOptions,
}

impl Problem {
    pub fn random(o: &GradcheckOptions) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
        let bounds = Aabb::cube(1.0);
        let mut grid = VoxelGrid::init([o.resolution; 3], bounds)?;
        for v in grid.data_mut().chunks_exact_mut(PAYLOAD_LEN) {
            for (s, x) in v.iter_mut().enumerate() {
                *x = if s == SIGMA_SLOT {
                    rng.gen_range(0.2..2.5)
                } else if s % 9 == 0 {
                    rng.gen_range(-0.6..0.9)
                } else {
                    rng.gen_range(-0.3..0.3)
                };
            }
        }
        // A few holes exercise the occupancy paths.
        for _ in 0..grid.vertex_count() / 20 {
            let i = rng.gen_range(0..grid.vertex_count());
            grid.set_occupied(i, false);
        }
        let mut cameras = Vec::new();
        let mut tone = Vec::new();
        let mut rays = Vec::new();
        for v in 0..o.views {
            let a = std::f64::consts::TAU * v as f64 / o.views as f64 + 0.3;
            let eye = [2.6 * a.sin(), 0.4 * (v as f64 - 1.5), -2.6 * a.cos()];
            let cam = Camera::look_at(eye, [0.05, -0.02, 0.03], [0.0, 1.0, 0.0], o.image_size as f64 * 0.9, o.image_size, o.image_size)?;
            cameras.push(cam);
            let mut p = ToneMapParams::identity(crate::tonemap::DEFAULT_ALPHA);
            p.wb = [rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)];
            for c in 0..3 {
                let g = rng.gen_range(1.5..3.0);
                for k in 1..CRF_KNOTS - 1 {
                    p.crf[c][k] = (k as f64 / 255.0).powf(1.0 / g) + rng.gen_range(-0.002..0.002);
                }
            }
            tone.push(p);
            for py in 0..o.image_size {
                for px in 0..o.image_size {
                    let observed = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                    rays.push(PoolRay {
                        view: v as u32,
                        px,
                        py,
                        observed,
                        mask: crate::losses::pixel_mask(observed, 0.15, 0.9),
                    });
                }
            }
        }
        let config = TrainConfig::desk();
        let mut opts = RenderOptions::for_grid(&grid);
        // Early termination is a discontinuity; march every sample.
        opts.t_cutoff = 0.0;
        opts.flip_sigma_adjoint = o.flip_sigma_adjoint;
        Ok(Problem {
            grid,
            tone,
            cameras,
            rays,
            config,
            opts,
        })
    }

    fn loss(&self) -> f64 {
        objective(&self.grid, &self.tone, &self.cameras, &self.rays, &self.config, &self.opts, true)
            .expect("finite objective")
            .total
    }
}

#[derive(Clone, Copy)]
enum Param {
    Grid(usize),
    Wb(usize, usize),
    Crf(usize, usize, usize),
}

impl Param {
    fn describe(self) -> String {
        match self {
            Param::Grid(i) => format!("vertex {} slot {}", i / PAYLOAD_LEN, i % PAYLOAD_LEN),
            Param::Wb(v, c) => format!("view {v} wb[{c}]"),
            Param::Crf(v, c, k) => format!("view {v} crf[{c}][{k}]"),
        }
    }
}

fn slot(p: &mut Problem, param: Param) -> &mut f64 {
    match param {
        Param::Grid(i) => &mut p.grid.data_mut()[i],
        Param::Wb(v, c) => &mut p.tone[v].wb[c],
        Param::Crf(v, c, k) => &mut p.tone[v].crf[c][k],
    }
}

fn central(p: &mut Problem, param: Param, h: f64) -> f64 {
    let x0 = *slot(p, param);
    *slot(p, param) = x0 + h;
    let plus = p.loss();
    *slot(p, param) = x0 - h;
    let minus = p.loss();
    *slot(p, param) = x0;
    (plus - minus) / (2.0 * h)
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-9 {
        // Both vanish: compare absolutely.
        return (analytic - numeric).abs() / 1e-9;
    }
    (analytic - numeric).abs() / scale
}

/// Runs the finite-difference suite.
pub fn run(o: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut p = Problem::random(o)?;
    let g = objective(&p.grid, &p.tone, &p.cameras, &p.rays, &p.config, &p.opts, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed ^ 0xF1D);
    let occupied: Vec<usize> = (0..p.grid.vertex_count()).filter(|&i| p.grid.is_occupied(i)).collect();
    let nviews = p.tone.len();
    let mut groups = Vec::new();
    for group in GROUPS {
        let mut res = GroupResult {
            group,
            probes: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
            worst: String::new(),
        };
        let mut attempts = 0;
        while res.probes < o.probes_per_group && attempts < o.probes_per_group * 20 {
            attempts += 1;
            let (param, analytic) = match group {
                "sigma" | "sh" => {
                    let v = occupied[rng.gen_range(0..occupied.len())];
                    let s = if group == "sigma" { SIGMA_SLOT } else { rng.gen_range(0..SIGMA_SLOT) };
                    let i = v * PAYLOAD_LEN + s;
                    (Param::Grid(i), g.grid[i])
                }
                "wb" => {
                    let (v, c) = (rng.gen_range(0..nviews), rng.gen_range(0..3));
                    (Param::Wb(v, c), g.tone[v].wb[c])
                }
                _ => {
                    let (v, c, k) = (rng.gen_range(0..nviews), rng.gen_range(0..3), rng.gen_range(1..CRF_KNOTS - 1));
                    (Param::Crf(v, c, k), g.tone[v].crf[c][k])
                }
            };
            // Skip probes with nothing to measure.
            if analytic.abs() < 1e-7 {
                continue;
            }
            let h = o.step * slot(&mut p, param).abs().max(1.0);
            let n1 = central(&mut p, param, h);
            let n2 = central(&mut p, param, 0.5 * h);
            if rel_error(n1, n2) > 1e-6 {
                res.skipped_kinks += 1;
                continue;
            }
            let e = rel_error(analytic, n2);
            res.probes += 1;
            if e >= res.max_rel_error {
                res.max_rel_error = e;
                res.worst = format!("{} (analytic {analytic:.6e}, numeric {n2:.6e})", param.describe());
            }
        }
        groups.push(res);
    }
    Ok(GradcheckReport { groups })
}
