use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use cresmd::gradcheck;
use cresmd::imaging::{self, degrade_seeded, load_ppm, save_ppm, DimKind};
use cresmd::model::{condition_in_range, load_checkpoint, save_checkpoint, CheckpointError, ForwardOptions, ModelError};
use cresmd::sampler::SamplerError;
use cresmd::train::{self, evaluate, modulation_sweep, IterLog, TrainConfig, TrainError};
use cresmd::{DegradationSpace, DegradationSpec, Image, ImageError, TensorError};
use cresmd_service::{AppState, ServiceConfig, DEFAULT_MAX_DIM};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Range(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Io(_) => 3,
            Self::Range(_) => 4,
            Self::Numeric(_) => 5,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::OutOfRange { .. } => Self::Range(e.to_string()),
            ImageError::DimensionMismatch { .. } | ImageError::InvalidSpace(_) => Self::Usage(e.to_string()),
            _ => Self::Io(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::ArchMismatch { .. } => Self::Usage(e.to_string()),
            _ => Self::Io(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Image(e) => e.into(),
            ModelError::Tensor(TensorError::NonFinite { .. }) => Self::Numeric(e.to_string()),
            _ => Self::Usage(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } | TrainError::Tensor(TensorError::NonFinite { .. }) => Self::Numeric(e.to_string()),
            TrainError::Model(e) => e.into(),
            TrainError::Image(e) | TrainError::Sampler(SamplerError::Image(e)) => e.into(),
            TrainError::Checkpoint(e) => e.into(),
            _ => Self::Usage(e.to_string()),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

/// Controllable multi-dimension image restoration.
#[derive(Parser, Debug)]
#[command(name = "cresmd", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Apply blur -> noise -> JPEG to a PPM image.
    Degrade(DegradeArgs),
    /// Jointly train the base and condition networks.
    Train(TrainArgs),
    /// Train the plain base network on one fixed degradation (upper bound).
    TrainBaseline(BaselineArgs),
    /// Restore a PPM image with a given condition vector.
    Restore(RestoreArgs),
    /// PSNR report over a dataset and a list of degradation specs.
    Eval(EvalArgs),
    /// Vary one condition entry over [0, 1] and write the frames and PSNR curve.
    Sweep(SweepArgs),
    /// Double-precision finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Start the HTTP inference service.
    Serve(ServeArgs),
    /// Write a set of synthetic texture images (toy dataset).
    Textures(TexturesArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SpaceArg {
    Desk2d,
    Full2d,
    Full3d,
}

impl SpaceArg {
    fn space(self) -> DegradationSpace {
        match self {
            Self::Desk2d => DegradationSpace::desk_2d(),
            Self::Full2d => DegradationSpace::full_2d(),
            Self::Full3d => DegradationSpace::full_3d(),
        }
    }
}

#[derive(Args, Debug)]
pub struct Levels {
    /// Gaussian blur width (kernel standard deviation), 0 disables.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub blur: f64,
    /// Noise standard deviation on the 0-255 scale, 0 disables.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub noise: f64,
    /// JPEG quality 10-100; omit for no compression.
    #[arg(long)]
    pub jpeg: Option<u8>,
}

impl Levels {
    fn spec(&self) -> DegradationSpec {
        DegradationSpec::new(self.blur, self.noise, self.jpeg)
    }
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub levels: Levels,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Space used to report the matching condition vector.
    #[arg(long, value_enum, default_value = "full3d")]
    pub space: SpaceArg,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML training configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of PPM/PGM training images.
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the configured number of iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Override the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub levels: Levels,
}

#[derive(Args, Debug)]
pub struct RestoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Condition vector, comma separated, one value per dimension.
    #[arg(long, allow_hyphen_values = true)]
    pub z: String,
    /// Multiplier on the global connection weights.
    #[arg(long, default_value_t = 1.0)]
    pub global_scale: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// CSV report path.
    #[arg(long)]
    pub out: PathBuf,
    /// Degradation spec `blur,noise[,jpeg]`; repeatable.
    #[arg(long = "spec", required = true)]
    pub specs: Vec<String>,
    /// Baseline checkpoint for one spec, as `blur,noise[,jpeg]=PATH`; repeatable.
    #[arg(long = "baseline")]
    pub baselines: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Clean reference; adds a PSNR column.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Dimension to vary, by name (blur, noise, jpeg) or index.
    #[arg(long)]
    pub dim: String,
    #[arg(long, default_value_t = 11)]
    pub steps: usize,
    /// Values of the other entries (default all zero).
    #[arg(long, allow_hyphen_values = true)]
    pub z: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub global_scale: f64,
    /// Directory for frame_NNN.ppm and sweep.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Largest accepted image side.
    #[arg(long, default_value_t = DEFAULT_MAX_DIM)]
    pub max_dim: usize,
    /// Disable permissive CORS headers.
    #[arg(long)]
    pub no_cors: bool,
}

#[derive(Args, Debug)]
pub struct TexturesArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Degrade(a) => degrade(a),
        Command::Train(a) => train_cmd(a, None),
        Command::TrainBaseline(a) => {
            let spec = a.levels.spec();
            train_cmd(a.train, Some(spec))
        }
        Command::Restore(a) => restore(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Serve(a) => serve(a),
        Command::Textures(a) => textures(a),
    }
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            match v.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(CliError::Usage(format!("{what}: {v:?} is not a finite number"))),
            }
        })
        .collect()
}

fn parse_spec(s: &str) -> Result<DegradationSpec> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || CliError::Usage(format!("spec {s:?}: expected blur,noise[,jpeg]"));
    if !(2..=3).contains(&parts.len()) {
        return Err(bad());
    }
    let blur = parts[0].parse().map_err(|_| bad())?;
    let noise = parts[1].parse().map_err(|_| bad())?;
    let jpeg = match parts.get(2) {
        None | Some(&"none") => None,
        Some(q) => Some(q.parse().map_err(|_| bad())?),
    };
    Ok(DegradationSpec::new(blur, noise, jpeg))
}

/// Every `.ppm`/`.pgm`/`.pnm` file in `dir`, in file-name order.
fn load_dataset(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm" | "pnm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("{}: no PPM/PGM images found", dir.display())));
    }
    paths
        .iter()
        .map(|p| load_ppm(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))))
        .collect()
}

fn fmt_z(z: &[f64]) -> String {
    let parts: Vec<String> = z.iter().map(|v| format!("{v}")).collect();
    parts.join(",")
}

fn degrade(a: DegradeArgs) -> Result<()> {
    let spec = a.levels.spec();
    let space = a.space.space();
    let img = load_ppm(&a.input)?;
    let out = degrade_seeded(&img, &spec, a.seed)?;
    let z = space.encode(&spec)?;
    save_ppm(&out, &a.out)?;
    println!("{spec}");
    println!("z={}", fmt_z(&z));
    Ok(())
}

fn train_cmd(a: TrainArgs, baseline: Option<DegradationSpec>) -> Result<()> {
    let text = fs::read_to_string(&a.config)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut config = TrainConfig::from_toml(&text)?;
    if let Some(n) = a.iterations {
        config.iterations = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let data = load_dataset(&a.data)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut file = match &config.log_path {
        Some(p) => Some(BufWriter::new(fs::File::create(p)?)),
        None => None,
    };
    writeln!(out, "iter,loss,lr")?;
    if let Some(f) = &mut file {
        writeln!(f, "iter,loss,lr")?;
    }
    let mut write_err = None;
    let mut log = |l: IterLog| {
        let r = writeln!(out, "{l}").and_then(|_| match &mut file {
            Some(f) => writeln!(f, "{l}"),
            None => Ok(()),
        });
        if let Err(e) = r {
            write_err.get_or_insert(e);
        }
    };
    let model = match baseline {
        None => train::train(&config, &data, &mut log)?,
        Some(spec) => train::train_baseline(&config, &data, spec, &mut log)?,
    };
    if let Some(e) = write_err {
        return Err(e.into());
    }
    if let Some(mut f) = file {
        f.flush()?;
    }
    let digest = save_checkpoint(&a.out, &model)?;
    eprintln!("saved {} (sha256 {digest})", a.out.display());
    Ok(())
}

fn restore(a: RestoreArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let z = parse_floats(&a.z, "--z")?;
    let n = ck.model.arch.condition_dim;
    if z.len() != n {
        return Err(CliError::Usage(format!("--z has {} values, model expects {n}", z.len())));
    }
    if !condition_in_range(&z) {
        eprintln!("warning: z={} lies outside [0, 1]; results are extrapolated", fmt_z(&z));
    }
    let img = load_ppm(&a.input)?;
    let out = ck.model.restore(
        &img,
        &z,
        ForwardOptions {
            global_scale: a.global_scale,
        },
    )?;
    save_ppm(&out, &a.out)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let data = load_dataset(&a.data)?;
    let specs = a.specs.iter().map(|s| parse_spec(s)).collect::<Result<Vec<_>>>()?;
    let mut report = evaluate(&ck.model, &data, &specs)?;
    for b in &a.baselines {
        let (spec, path) = b
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--baseline {b:?}: expected SPEC=PATH")))?;
        let spec = parse_spec(spec)?;
        let base = load_checkpoint(path)?;
        report = report.with_baseline(&evaluate(&base.model, &data, &[spec])?);
    }
    fs::write(&a.out, report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let m = &ck.model;
    let dim = match a.dim.parse::<usize>() {
        Ok(i) => i,
        Err(_) => {
            let kind = match a.dim.as_str() {
                "blur" => DimKind::Blur,
                "noise" => DimKind::Noise,
                "jpeg" => DimKind::Jpeg,
                other => return Err(CliError::Usage(format!("--dim: unknown dimension {other:?}"))),
            };
            m.space
                .position(kind)
                .ok_or_else(|| CliError::Usage(format!("--dim: model has no {} dimension", a.dim)))?
        }
    };
    let fixed = match &a.z {
        Some(z) => parse_floats(z, "--z")?,
        None => vec![0.0; m.arch.condition_dim],
    };
    let degraded = load_ppm(&a.input)?;
    let clean = a.clean.as_ref().map(load_ppm).transpose()?;
    let frames = modulation_sweep(
        m,
        &degraded,
        clean.as_ref(),
        dim,
        a.steps,
        &fixed,
        ForwardOptions {
            global_scale: a.global_scale,
        },
    )?;
    fs::create_dir_all(&a.out_dir)?;
    let zcols: Vec<String> = (0..m.arch.condition_dim).map(|i| format!("z{i}")).collect();
    let mut csv = format!("step,{},psnr\n", zcols.join(","));
    for (k, f) in frames.iter().enumerate() {
        save_ppm(&f.image, a.out_dir.join(format!("frame_{k:03}.ppm")))?;
        let psnr = f.psnr.map(|p| format!("{p:.4}")).unwrap_or_default();
        csv.push_str(&format!("{k},{},{psnr}\n", fmt_z(&f.z)));
    }
    fs::write(a.out_dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let start = Instant::now();
    let checks = gradcheck::run_suite(a.seed)?;
    let mut failed = 0;
    for c in &checks {
        println!("{c}");
        failed += usize::from(!c.passed());
    }
    println!("{} checks, {failed} failed, {:.1}s", checks.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let state = AppState {
        model: ck.model,
        digest: ck.digest,
        config: ServiceConfig {
            max_dim: a.max_dim,
            cors: !a.no_cors,
        },
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| CliError::Io(format!("bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        io::stdout().flush()?;
        cresmd_service::serve(listener, state).await?;
        Ok(())
    })
}

fn textures(a: TexturesArgs) -> Result<()> {
    if a.size < 16 {
        return Err(CliError::Usage("--size must be at least 16".into()));
    }
    fs::create_dir_all(&a.out_dir)?;
    for (i, img) in imaging::textures::texture_set(a.seed, a.count, a.size, a.size).iter().enumerate() {
        save_ppm(img, a.out_dir.join(format!("texture_{i:03}.ppm")))?;
    }
    println!("wrote {} images to {}", a.count, a.out_dir.display());
    Ok(())
}
