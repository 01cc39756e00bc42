//! Command-line front end: training, sampling, evaluation and benchmarks.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use neurint::baselines::train_neurint_pt;
use neurint::eval::{
    bench_interpolants, eval_step_sweep, evaluate, generated_intermediates, pca_over_time, write_sweep_csv,
    write_timing_csv,
};
use neurint::model::{generate_curve, sample_trajectory_family};
use neurint::render::{render_curves, Rendered};
use neurint::training::{seeded_rng, write_history_csv, Optimizers, TrainScope};
use neurint::{
    Checkpoint, Dataset, InterpolationCurve, InterpolatorKind, LossReport, ModelBundle, RunConfig, SolverConfig,
    SolverMethod, Trainer,
};

pub const SWEEP_STEPS: [usize; 6] = [12, 16, 20, 24, 28, 32];
pub const CHECKPOINT_FILE: &str = "checkpoint.nrnt";

#[derive(Debug, Parser)]
#[command(name = "neurint", version, about = "Latent neural ODE interpolation between data points")]
pub struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; every artifact is written below it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra `key=value` configuration overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write losses and a checkpoint.
    Train,
    /// Decode intermediates of random pairs at random times.
    Generate(GenerateArgs),
    /// Interpolate between random pairs and write the curves.
    Interpolate(InterpolateArgs),
    /// Sample several curves for one pair.
    Family(FamilyArgs),
    /// Score a checkpoint.
    Eval(CheckpointArg),
    /// Score a checkpoint under several solver settings.
    Sweep(CheckpointArg),
    /// Time latent-interpolant generation per solver setting.
    Bench(BenchArgs),
    /// Train every interpolator kind with the same budget and score each.
    Ablate,
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Defaults to `<out>/checkpoint.nrnt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    /// Interpolator; defaults to the checkpoint's kind.
    #[arg(long)]
    pub method: Option<InterpolatorKind>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub solver: Option<SolverMethod>,
    #[arg(long, default_value_t = 4)]
    pub pairs: usize,
    /// Time samples per curve in the written CSV.
    #[arg(long, default_value_t = 11)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct FamilyArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    #[arg(long, default_value_t = 11)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1000)]
    pub items: usize,
}

/// Parses `args` and runs the command. Usage errors are returned as
/// `clap::Error` inside the `anyhow` error so callers can pick the exit code.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(cli)
}

/// Exit status for an error from [`run`]: clap's own code for usage
/// errors (2, or 0 for `--help`), 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<clap::Error>() {
        Some(e) => e.exit_code(),
        None => 1,
    }
}

pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    let mut overrides = Vec::with_capacity(cli.overrides.len());
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
        overrides.push((k.trim(), v.trim()));
    }
    // Switching dataset resets model defaults, so it goes first.
    overrides.sort_by_key(|(k, _)| *k != "dataset");
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    let data = Dataset::generate_with_noise(cfg.dataset, cfg.n_items, cfg.seed(), cfg.noise)?;
    match &cli.command {
        Command::Train => {
            let ck = train_checkpoint(&cfg, cfg.kind, &data, &cfg.out)?;
            println!("trained {} for {} steps; checkpoint in {}", cfg.kind, ck.step, cfg.out.display());
        }
        Command::Generate(a) => {
            let ck = load_checkpoint(&cfg, &a.checkpoint)?;
            let mut eval = cfg.eval;
            eval.pairs = a.n;
            eval.samples_per_pair = 1;
            let (samples, _) = generated_intermediates(&ck.bundle, &data, &eval, cfg.solver())?;
            let path = cfg.out.join("samples.csv");
            let mut out = create(&path)?;
            let cols: Vec<String> = (0..samples.cols()).map(|j| format!("x{j}")).collect();
            writeln!(out, "{}", cols.join(","))?;
            for r in 0..samples.rows() {
                writeln!(out, "{}", join(samples.row(r)))?;
            }
            println!("wrote {} samples to {}", samples.rows(), path.display());
        }
        Command::Interpolate(a) => interpolate(&cfg, &data, a)?,
        Command::Family(a) => family(&cfg, &data, a)?,
        Command::Eval(a) => {
            let ck = load_checkpoint(&cfg, a)?;
            let report = evaluate(&ck.bundle, &data, &cfg.eval, cfg.solver())?;
            fs::write(cfg.out.join("eval.txt"), report.to_key_values())?;
            fs::write(
                cfg.out.join("eval.csv"),
                format!("{}\n{}\n", neurint::EvalReport::csv_header(), report.csv_row()),
            )?;
            print!("{}", report.to_key_values());
        }
        Command::Sweep(a) => {
            let ck = load_checkpoint(&cfg, a)?;
            let rows = eval_step_sweep(
                &ck.bundle,
                &data,
                &cfg.eval,
                &[SolverMethod::Euler, SolverMethod::Rk4],
                &SWEEP_STEPS,
                cfg.solver().total_time,
            )?;
            let path = cfg.out.join("sweep.csv");
            write_sweep_csv(&mut create(&path)?, &rows)?;
            println!("wrote {}", path.display());
        }
        Command::Bench(a) => {
            let ck = load_checkpoint(&cfg, &a.checkpoint)?;
            let rows = bench_interpolants(
                &ck.bundle,
                &data,
                &[SolverMethod::Euler, SolverMethod::Rk4],
                &SWEEP_STEPS,
                a.items,
                a.repeats,
            )?;
            let path = cfg.out.join("bench.csv");
            write_timing_csv(&mut create(&path)?, &rows)?;
            println!("wrote {}", path.display());
        }
        Command::Ablate => ablate(&cfg, &data)?,
    }
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn checkpoint_path(cfg: &RunConfig, arg: &CheckpointArg) -> PathBuf {
    arg.checkpoint.clone().unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE))
}

fn load_checkpoint(cfg: &RunConfig, arg: &CheckpointArg) -> Result<Checkpoint> {
    let path = checkpoint_path(cfg, arg);
    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if ck.config.dataset != cfg.dataset {
        bail!(
            "checkpoint was trained on {} but the configuration selects {}",
            ck.config.dataset,
            cfg.dataset
        );
    }
    Ok(ck)
}

/// Trains `kind` under `cfg` and writes `losses.csv` and the checkpoint to `dir`.
pub fn train_checkpoint(cfg: &RunConfig, kind: InterpolatorKind, data: &Dataset, dir: &Path) -> Result<Checkpoint> {
    fs::create_dir_all(dir)?;
    let mut run_cfg = cfg.clone();
    run_cfg.kind = kind;
    let (ck, history): (Checkpoint, Vec<LossReport>) = if kind == InterpolatorKind::NeurIntPt {
        let run = train_neurint_pt(data, &run_cfg.model, &run_cfg.train)?;
        let ck = Checkpoint {
            config: run_cfg.clone(),
            bundle: run.bundle,
            optimizers: Optimizers::new(run_cfg.train.optimizer),
            rng: seeded_rng(run_cfg.seed()),
            step: run.phase2.len(),
            scope: TrainScope::interpolator_only(),
        };
        (ck, run.phase2)
    } else {
        let mut rng = seeded_rng(run_cfg.seed());
        let bundle = ModelBundle::init(run_cfg.model.clone(), kind, &mut rng)?;
        let mut trainer = Trainer::with_rng(bundle, run_cfg.train.clone(), data, rng)?;
        trainer.run(data, run_cfg.train.steps)?;
        let history = std::mem::take(&mut trainer.history);
        (Checkpoint::from_trainer(&run_cfg, &trainer), history)
    };
    write_history_csv(&mut create(&dir.join("losses.csv"))?, &history)?;
    ck.save(&dir.join(CHECKPOINT_FILE))?;
    Ok(ck)
}

/// The checkpoint's bundle driven by `method`. Closed-form interpolators
/// reuse any trained encoder and generator; ODE interpolators need a
/// checkpoint trained with matching networks.
pub fn bundle_for_method(ck: &Checkpoint, method: InterpolatorKind) -> Result<ModelBundle> {
    let mut bundle = ck.bundle.clone();
    if method == bundle.kind {
        return Ok(bundle);
    }
    let second_order = |k: InterpolatorKind| k.is_second_order();
    if !(method.is_closed_form() || (second_order(method) && second_order(bundle.kind))) {
        bail!(
            "checkpoint holds a {} model; --method {method} needs a checkpoint trained as {method}",
            bundle.kind
        );
    }
    bundle.kind = method;
    Ok(bundle)
}

fn sample_times(total: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| if i + 1 == n { total } else { total * i as f64 / (n - 1) as f64 })
        .collect()
}

fn write_curve_csv(path: &Path, curve: &InterpolationCurve, times: &[f64]) -> Result<()> {
    let mut out = create(path)?;
    let frames = curve.sample_images(times)?;
    let b = curve.batch();
    let cols: Vec<String> = (0..frames.cols()).map(|j| format!("x{j}")).collect();
    writeln!(out, "pair,t,{}", cols.join(","))?;
    for p in 0..b {
        for (k, t) in times.iter().enumerate() {
            writeln!(out, "{p},{t},{}", join(frames.row(k * b + p)))?;
        }
    }
    Ok(())
}

fn write_latent_csv(path: &Path, curve: &InterpolationCurve, times: &[f64]) -> Result<()> {
    let mut out = create(path)?;
    let latent = curve.latent();
    let d = latent.at(0.0)?.cols();
    let cols: Vec<String> = (0..d).map(|j| format!("z_{j}")).collect();
    writeln!(out, "pair,t,{}", cols.join(","))?;
    let points = times.iter().map(|&t| latent.at(t)).collect::<neurint::Result<Vec<_>>>()?;
    for p in 0..curve.batch() {
        for (t, z) in times.iter().zip(&points) {
            writeln!(out, "{p},{t},{}", join(z.row(p)))?;
        }
    }
    Ok(())
}

fn report_render(r: Rendered) {
    match r {
        Rendered::Strip(p) => println!("wrote {}", p.display()),
        Rendered::Scatter(p) => println!("data is not image-like; wrote scatter CSV {}", p.display()),
    }
}

fn interpolate(cfg: &RunConfig, data: &Dataset, a: &InterpolateArgs) -> Result<()> {
    let ck = load_checkpoint(cfg, &a.checkpoint)?;
    let method = a.method.unwrap_or(ck.bundle.kind);
    let bundle = bundle_for_method(&ck, method)?;
    let solver = SolverConfig::new(
        a.solver.unwrap_or(cfg.solver().method),
        a.steps.unwrap_or(cfg.solver().steps),
        cfg.solver().total_time,
    )?;
    let mut rng = seeded_rng(cfg.seed());
    let (s, t) = data.sample_pairs(cfg.eval.support, a.pairs, &mut rng)?;
    let curve = generate_curve(&bundle, &s, &t, None, &solver, &mut rng)?;
    let times = sample_times(solver.total_time, a.samples);
    let path = cfg.out.join(format!("interpolate_{method}.csv"));
    write_curve_csv(&path, &curve, &times)?;
    write_latent_csv(&cfg.out.join(format!("latent_{method}.csv")), &curve, &times)?;
    if let Some(traj) = curve.latent().trajectory() {
        traj.write_csv(&mut create(&cfg.out.join(format!("trajectory_{method}.csv")))?, 0)?;
    }
    println!("wrote {}", path.display());
    report_render(render_curves(
        cfg.dataset,
        &curve.sample_images(&times)?,
        &times,
        a.pairs,
        &cfg.out,
        &format!("frames_{method}"),
    )?);
    Ok(())
}

fn family(cfg: &RunConfig, data: &Dataset, a: &FamilyArgs) -> Result<()> {
    let ck = load_checkpoint(cfg, &a.checkpoint)?;
    let mut rng = seeded_rng(cfg.seed());
    let (s, t) = data.sample_pairs(cfg.eval.support, 1, &mut rng)?;
    let curves = sample_trajectory_family(&ck.bundle, &s, &t, a.k, cfg.solver(), &mut rng)?;
    let times = sample_times(cfg.solver().total_time, a.samples);
    let mut out = create(&cfg.out.join("family.csv"))?;
    let d = data.data_dim();
    let cols: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    writeln!(out, "curve,t,{}", cols.join(","))?;
    let mut frames = Vec::new();
    for (k, c) in curves.iter().enumerate() {
        let x = c.sample_images(&times)?;
        for (i, t) in times.iter().enumerate() {
            writeln!(out, "{k},{t},{}", join(x.row(i)))?;
        }
        frames.push(x);
    }
    out.flush()?;
    let latents: Vec<_> = curves.iter().map(|c| c.latent()).collect();
    match pca_over_time(&latents, times.len()) {
        Ok(series) => series.write_csv(&mut create(&cfg.out.join("family_pca.csv"))?)?,
        Err(neurint::Error::ZeroVariance) => println!("latent curves coincide; skipped family_pca.csv"),
        Err(e) => return Err(e.into()),
    }
    // Time-major layout with one row per curve.
    let mut rows = Vec::with_capacity(times.len() * a.k);
    for i in 0..times.len() {
        for f in &frames {
            rows.push(f.row(i).to_vec());
        }
    }
    let stacked = neurint::Tensor::from_rows(&rows)?;
    report_render(render_curves(cfg.dataset, &stacked, &times, a.k, &cfg.out, "family_frames")?);
    println!("wrote {}", cfg.out.join("family.csv").display());
    Ok(())
}

fn ablate(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    let mut out = create(&cfg.out.join("ablate.csv"))?;
    writeln!(out, "kind,surrogate_fid,midpoint_residual,endpoint_mse")?;
    for kind in InterpolatorKind::ALL {
        let dir = cfg.out.join(kind.name());
        let ck = train_checkpoint(cfg, kind, data, &dir)?;
        let report = evaluate(&ck.bundle, data, &cfg.eval, cfg.solver())?;
        fs::write(dir.join("eval.txt"), report.to_key_values())?;
        writeln!(
            out,
            "{kind},{},{},{}",
            report.surrogate_fid, report.midpoint_residual, report.endpoint_mse
        )?;
        println!("{kind}: surrogate_fid = {}", report.surrogate_fid);
    }
    out.flush()?;
    Ok(())
}

