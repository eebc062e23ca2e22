//! `hdrfield` — synthesize oracle datasets, train, render and evaluate
//! self-calibrating HDR radiance fields.
//!
//! Exit codes: 0 success, 2 invalid input (flags, spec, config, dataset
//! mismatch, unknown view), 3 I/O failure, 4 divergence or non-finite
//! values during training, 5 gradcheck failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hdrfield::eval::{evaluate, evaluate_oracle};
use hdrfield::gradcheck::{self, GradcheckOptions};
use hdrfield::io::{write_pfm, write_png, Dataset, Pose};
use hdrfield::oracle::{default_scene_spec, synthesize, tonemap_image, RigSpec, SceneSpec, MANIFEST_FILE};
use hdrfield::render::render_image;
use hdrfield::tonemap::edit_render;
use hdrfield::trainer::{log_csv, render_options, StepLog, TrainCheckpoint, TrainConfig, Trainer, LOG_HEADER};
use hdrfield::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_TRAINING: u8 = 4;
const EXIT_GRADCHECK: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "hdrfield", version, about = "Self-calibrating HDR radiance fields on a sparse voxel grid")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Ordered, single-chunk reductions: bit-reproducible output.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic oracle dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Render a trained model, optionally with radiometric edits.
    Render(RenderArgs),
    /// Evaluate held-out views (and ground-truth recovery when available).
    Eval(EvalArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// `default` or a scene spec file.
    #[arg(long, default_value = "default")]
    spec: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `varying` or `static`.
    #[arg(long, default_value = "varying")]
    profile: String,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    data: PathBuf,
    /// `key = value` config file; applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// desk, smoke or paper.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many further steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Test hook: negate the opacity adjoint.
    #[arg(long, hide = true)]
    flip_sigma_adjoint: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Training view id whose camera and tone parameters are used.
    #[arg(long, conflicts_with = "pose", required_unless_present = "pose")]
    view: Option<String>,
    /// JSON pose file (intrinsics + camera_to_world); tone parameters
    /// come from the reference view.
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Also write the tone-mapped PNG.
    #[arg(long)]
    ldr: bool,
    /// Accepted for symmetry; the HDR PFM is always written.
    #[arg(long)]
    hdr: bool,
    /// White-balance override `r,g,b`.
    #[arg(long, value_parser = parse_triple)]
    wb: Option<[f64; 3]>,
    /// Multiplies the white balance, i.e. the exposure (2^EV).
    #[arg(long)]
    exposure_scale: Option<f64>,
    /// Use the response curves learned for another view.
    #[arg(long)]
    crf_from: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    ckpt: Option<PathBuf>,
    /// Evaluate the dataset's ground truth instead of a checkpoint.
    #[arg(long, conflicts_with = "ckpt")]
    oracle: bool,
    #[arg(long)]
    data: PathBuf,
    /// CSV report path (the human summary goes to stdout).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "tiny")]
    scale: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Test hook: negate the opacity adjoint; the check must then fail.
    #[arg(long, hide = true)]
    flip_sigma_adjoint: bool,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            Error::NonFinite { .. } | Error::Divergence { .. } => EXIT_TRAINING,
            Error::InvalidInput(_) | Error::Format { .. } | Error::OutOfBounds { .. } => EXIT_INPUT,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn input(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        msg: msg.into(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("cannot parse {x:?}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated values".to_string())
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

fn create_out(out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let spec = if a.spec == "default" {
        default_scene_spec()
    } else {
        let p = Path::new(&a.spec);
        let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        SceneSpec::parse(&text)?
    };
    let ds = synthesize(&spec, &RigSpec::default(), &a.profile, a.seed, &a.out)?;
    let tests = ds.manifest.views.iter().filter(|v| v.role == hdrfield::io::Role::Test).count();
    println!(
        "wrote {} views ({} test) to {}",
        ds.manifest.views.len(),
        tests,
        a.out.display()
    );
    Ok(())
}

fn crf_csv(tr: &Trainer) -> String {
    let mut s = String::from("view,channel,knot,value\n");
    for (id, p) in tr.view_ids().iter().zip(tr.tone()) {
        for (c, table) in p.crf.iter().enumerate() {
            for (k, v) in table.iter().enumerate() {
                let _ = writeln!(s, "{id},{},{k},{v:.9}", ["r", "g", "b"][c]);
            }
        }
    }
    s
}

fn train(a: &TrainArgs, deterministic: bool) -> Result<(), Failure> {
    let dataset = Dataset::load(&manifest_path(&a.data))?;
    create_out(&a.out)?;
    let mut tr = match &a.resume {
        Some(p) => {
            if a.config.is_some() || a.seed.is_some() {
                return Err(input("--resume continues with the checkpoint's own config; drop --config/--seed"));
            }
            let mut ck = TrainCheckpoint::load(p)?;
            ck.config.deterministic |= deterministic;
            Trainer::resume(&dataset, ck)?
        }
        None => {
            let base = TrainConfig::preset(&a.preset)?;
            let mut cfg = match &a.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                    TrainConfig::from_text(&text, base)?
                }
                None => base,
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            cfg.deterministic |= deterministic;
            Trainer::new(&dataset, cfg)?
        }
    };
    tr.set_flip_sigma_adjoint(a.flip_sigma_adjoint);
    write_text(&a.out.join("config.txt"), &tr.config().to_text())?;
    let every = tr.config().checkpoint_every;
    let total = tr.config().total_steps();
    let out = a.out.clone();
    let started = std::time::Instant::now();
    let result = tr.run(a.steps, |tr, row: &StepLog| {
        let s = tr.step_count();
        if every > 0 && s % every == 0 && s < total {
            tr.checkpoint().save(&out.join(format!("step_{s:06}.ckpt")))?;
        }
        if row.step % 500 == 0 {
            eprintln!(
                "step {:>6}/{total} epoch {:>2} recon {:.4e} total {:.4e} occupied {}",
                row.step, row.epoch, row.losses.recon, row.total, row.occupied
            );
        }
        Ok(())
    });
    let logs = match result {
        Ok(l) => l,
        Err(e) => {
            // Keep the state just before the failure for inspection.
            let _ = tr.checkpoint().save(&a.out.join("failed.ckpt"));
            return Err(e.into());
        }
    };
    // Appending keeps the log whole across resumed runs.
    let log_path = a.out.join("log.csv");
    let body = log_csv(&logs);
    let text = if a.resume.is_some() && log_path.is_file() {
        body.strip_prefix(LOG_HEADER).unwrap_or(&body).trim_start_matches('\n').to_string()
    } else {
        body
    };
    if a.resume.is_some() && log_path.is_file() {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| io_err(&log_path, e))?;
    } else {
        write_text(&log_path, &text)?;
    }
    write_text(&a.out.join("crf.csv"), &crf_csv(&tr))?;
    let name = if tr.is_done() { "final.ckpt" } else { "last.ckpt" };
    tr.checkpoint().save(&a.out.join(name))?;
    println!(
        "trained {} steps in {:.1?}; step {}/{total}; wrote {}",
        logs.len(),
        started.elapsed(),
        tr.step_count(),
        a.out.join(name).display()
    );
    if let Some(last) = logs.last() {
        println!("final recon {:.6e} total {:.6e}", last.losses.recon, last.total);
    }
    Ok(())
}

fn render(a: &RenderArgs) -> Result<(), Failure> {
    let ck = TrainCheckpoint::load(&a.ckpt)?;
    let view_index = |id: &str| ck.view_index(id).ok_or_else(|| input(format!("unknown view id {id:?}")));
    let (cam, base, stem) = match (&a.view, &a.pose) {
        (Some(id), None) => {
            let i = view_index(id)?;
            (ck.cameras[i].clone(), &ck.tone[i], id.clone())
        }
        (None, Some(p)) => (Pose::load(p)?.camera()?, &ck.tone[ck.reference], "pose".to_string()),
        _ => return Err(input("give exactly one of --view or --pose")),
    };
    let crf = match &a.crf_from {
        Some(id) => Some(&ck.tone[view_index(id)?].crf),
        None => None,
    };
    let params = edit_render(base, a.wb, a.exposure_scale, crf)?;
    create_out(&a.out)?;
    let opts = render_options(&ck.config, &ck.grid);
    let hdr = render_image(&ck.grid, &cam, &opts);
    let hdr_path = a.out.join(format!("{stem}.pfm"));
    write_pfm(&hdr_path, &hdr)?;
    println!("{}", hdr_path.display());
    if a.ldr {
        let png = a.out.join(format!("{stem}.png"));
        write_png(&png, &tonemap_image(&hdr, &params))?;
        println!("{}", png.display());
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let dataset = Dataset::load(&manifest_path(&a.data))?;
    let report = match &a.ckpt {
        Some(p) => evaluate(&TrainCheckpoint::load(p)?, &dataset)?,
        None => evaluate_oracle(&dataset)?,
    };
    if let Some(p) = &a.report {
        write_text(p, &report.to_csv())?;
    }
    print!("{}", report.summary());
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    if a.scale != "tiny" {
        return Err(input(format!("unknown scale {:?} (only \"tiny\")", a.scale)));
    }
    let started = std::time::Instant::now();
    let report = gradcheck::run(&GradcheckOptions {
        seed: a.seed,
        flip_sigma_adjoint: a.flip_sigma_adjoint,
        ..Default::default()
    })?;
    print!("{}", report.table());
    eprintln!("gradcheck took {:.1?}", started.elapsed());
    if report.passed() {
        Ok(())
    } else {
        let w = report.worst();
        Err(Failure {
            code: EXIT_GRADCHECK,
            msg: format!(
                "gradcheck failed: group {} max relative error {:.3e} at {}",
                w.group, w.max_rel_error, w.worst
            ),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_INPUT);
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a, cli.deterministic),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
