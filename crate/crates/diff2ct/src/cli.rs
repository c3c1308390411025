//! Command-line surface. Exit codes: 0 success, 1 usage, 2 data or format,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diff2ct_core::losses::LossMode;
use diff2ct_core::phantom::PhantomSpec;
use diff2ct_core::projector::{orthogonal_project, ProjectionPlane};
use diff2ct_core::training::{ModelKind, TrainConfig};

use crate::checkpoint::load_checkpoint;
use crate::datagen::{build_dataset, DatasetOptions};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, write_report, DEFAULT_FEATURE_SEED};
use crate::format::{read_image, read_volume, write_image, write_volume};
use crate::manifest::Split;
use crate::parallel::threads_from_env;
use crate::sample::{reconstruct, reconstruct_split};
use crate::train::{train, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "diff2ct", version, about = "Biplanar X-ray to CT reconstruction with a conditional diffusion model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset and its manifest.
    Phantom(PhantomArgs),
    /// Mean-project a volume onto one plane.
    Project(ProjectArgs),
    /// Train the diffusion model (or the regression baseline).
    Train(TrainArgs),
    /// Reconstruct a volume from a lateral/frontal X-ray pair.
    Sample(SampleArgs),
    /// Reconstruct every case of one split of a manifest.
    Reconstruct(ReconstructArgs),
    /// Score reconstructions of the test split against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Edge length of the cubic target volume in voxels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Isotropic target spacing in mm.
    #[arg(long, default_value_t = 2.0)]
    pub spacing: f64,
    /// Acquire at this anisotropic spacing (mm, `sx,sy,sz`) and resample.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub raw_spacing: Option<Vec<f64>>,
    #[arg(long)]
    pub screws: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl From<Plane> for ProjectionPlane {
    fn from(p: Plane) -> Self {
        match p {
            Plane::Axial => ProjectionPlane::Axial,
            Plane::Coronal => ProjectionPlane::Coronal,
            Plane::Sagittal => ProjectionPlane::Sagittal,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub plane: Plane,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    NoiseOnly,
    WithProjection,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file with `TrainConfig` fields; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train the regression baseline instead of the diffusion model.
    #[arg(long)]
    pub baseline: bool,
    /// Continue from a checkpoint written with the same configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub loss_mode: Option<LossArg>,
    #[arg(long)]
    pub volume_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Steps between progress lines on stderr; 0 silences them.
    #[arg(long, default_value_t = 100)]
    pub progress_every: u64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub xray_lateral: PathBuf,
    #[arg(long)]
    pub xray_frontal: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Case `i` is sampled with seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FEATURE_SEED)]
    pub feature_seed: u64,
}

/// Config file (if any) with flag overrides applied.
pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(Error::io(p))?;
            serde_json::from_str(&text).map_err(Error::json(p))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = args.steps {
        cfg.steps = Some(s);
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
        if args.steps.is_none() {
            cfg.steps = None;
        }
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(m) = args.loss_mode {
        cfg.loss_mode = match m {
            LossArg::NoiseOnly => LossMode::NoiseOnly,
            LossArg::WithProjection => LossMode::WithProjection,
        };
    }
    if let Some(v) = args.volume_size {
        cfg.volume_size = v;
    }
    if let Some(c) = args.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    cfg.validate().map_err(|e| Error::Usage(format!("invalid configuration: {e}")))?;
    Ok(cfg)
}

fn phantom(args: &PhantomArgs) -> Result<()> {
    let mut spec = PhantomSpec { volume_size: [args.size; 3], spacing: [args.spacing; 3], ..PhantomSpec::default() };
    if let Some(n) = args.screws {
        spec.n_screws = n;
    }
    let raw_spacing = args.raw_spacing.as_ref().map(|v| [v[0], v[1], v[2]]);
    let opts = DatasetOptions { count: args.count, seed: args.seed, spec, raw_spacing, threads: threads_from_env()? };
    let m = build_dataset(&opts, &args.out)?;
    let n_test = m.split(Split::Test).count();
    eprintln!("wrote {} cases ({} train, {n_test} test) to {}", m.cases.len(), m.cases.len() - n_test, args.out.display());
    Ok(())
}

fn project(args: &ProjectArgs) -> Result<()> {
    let v = read_volume(&args.input)?;
    write_image(&orthogonal_project(&v, args.plane.into()), &args.out)
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = train_config(args)?;
    let kind = if args.baseline { ModelKind::Regressor } else { ModelKind::Diffusion };
    let opts = TrainOptions { kind, resume: args.resume.clone(), progress_every: args.progress_every };
    let s = train(&args.manifest, &cfg, &args.out, &opts)?;
    eprintln!(
        "trained {} steps; running loss {:.5} -> {:.5}; checkpoint {}",
        s.steps,
        s.initial_loss,
        s.final_loss,
        s.checkpoint.display()
    );
    Ok(())
}

fn sample_cmd(args: &SampleArgs) -> Result<()> {
    let lateral = read_image(&args.xray_lateral)?;
    let frontal = read_image(&args.xray_frontal)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let v = reconstruct(&ckpt, &lateral, &frontal, args.seed)?;
    write_volume(&v, &args.out)
}

fn reconstruct_cmd(args: &ReconstructArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let written = reconstruct_split(&ckpt, &args.manifest, split, &args.out, args.seed, threads_from_env()?)?;
    eprintln!("wrote {} reconstructions to {}", written.len(), args.out.display());
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let e = evaluate_dataset(&args.manifest, &args.pred, args.feature_seed, threads_from_env()?)?;
    write_report(&e, &args.report)?;
    let r = &e.report;
    eprintln!(
        "{} cases: MAE {:.4} PSNR {:.2} SSIM {:.4} Fréchet {}",
        r.rows.len(),
        r.mae.mean,
        r.psnr.mean,
        r.ssim.mean,
        r.frechet.map_or_else(|| "n/a".to_string(), |f| format!("{f:.4}"))
    );
    if e.missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingReconstructions(e.missing))
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Project(a) => project(a),
        Command::Train(a) => train_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let text = s.to_string();
        if !e.to_string().ends_with(&text) {
            eprintln!("  caused by: {text}");
        }
        source = s.source();
    }
}

/// Parses `args` and runs the command, mapping failures to exit codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code())
        }
    }
}

