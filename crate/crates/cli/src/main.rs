use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use egosynth_core::data::{frame_dir_manifest, generate_split, scan_dataset, sorted_files, DatasetManifest, Frame, SplitSpec};
use egosynth_core::metrics::{evaluate, Backends, ConstantDetector, MetricReport};
use egosynth_core::pipeline::{
    evaluate_predictions, infer_manifest, make_fixtures, train, FixtureSpec, PipelineConfig, Stage, StageSelection,
};
use log::{info, warn};

mod settings;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 1.
    Usage(String),
    /// The operation itself failed; exit code 2.
    Runtime(egosynth_core::Error),
}

impl From<egosynth_core::Error> for CliError {
    fn from(e: egosynth_core::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser)]
#[command(name = "egosynth", version, about = "Exocentric-to-egocentric frame synthesis")]
struct Cli {
    /// JSON config file; falls back to $EGOSYNTH_CONFIG.
    #[arg(long, global = true, env = settings::CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `--set layout_stage.steps=100`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Global seed; shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log level for stderr.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic exo/ego dataset and its manifest.
    MakeFixtures(MakeFixturesArgs),
    /// Scan a dataset directory tree into a clip manifest.
    BuildManifest(BuildManifestArgs),
    /// Partition a manifest into train.json and test.json.
    Split(SplitArgs),
    /// Train the layout translator, the diffusion model, or both.
    Train(TrainArgs),
    /// Predict ego frames and layouts for every clip.
    Infer(InferArgs),
    /// Score predicted ego frames against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct MakeFixturesArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    videos: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = 30)]
    clip_len: usize,
    /// Square frame side in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Std of pixel noise in exo frames.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
}

#[derive(Args)]
struct BuildManifestArgs {
    /// Dataset root holding one directory per video.
    root: PathBuf,
    #[arg(long, default_value = "dataset")]
    name: String,
    #[arg(long, default_value_t = egosynth_core::data::DEFAULT_CLIP_LEN)]
    clip_len: usize,
    /// Manifest path; defaults to <root>/manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    NewActions,
    NewObjects,
    NewSubjects,
    NewScenes,
}

#[derive(Args)]
struct SplitArgs {
    manifest: PathBuf,
    #[arg(long, value_enum)]
    strategy: Strategy,
    /// Fraction of each video's clips used for training (new-actions).
    #[arg(long, default_value_t = egosynth_core::data::split::DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    /// Held-out object ids (new-objects).
    #[arg(long, value_delimiter = ',')]
    held_out_objects: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    train_subjects: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    test_subjects: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    train_scenes: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    test_scenes: Vec<String>,
    /// Directory for train.json and test.json; defaults to the manifest's directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Layout,
    Diffusion,
    All,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest.
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    stage: StageArg,
    /// Step budget for every selected stage.
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Output directory (config `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// A manifest, or a directory with exo/*.png and exo_layout/*.
    input: PathBuf,
    /// Where predicted frames, layouts and run.json go.
    #[arg(long)]
    out: PathBuf,
    /// Layout translator checkpoint; defaults to <output_dir>/translator.ckpt.
    #[arg(long)]
    translator: Option<PathBuf>,
    /// Diffusion checkpoint; defaults to <output_dir>/denoiser.ckpt.
    #[arg(long)]
    denoiser: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions: an infer output directory, or a directory of PNG frames.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth: a manifest with ego frames, or a directory of PNG frames.
    #[arg(long)]
    gt: PathBuf,
    /// Split label for the report.
    #[arg(long, default_value = "test")]
    split: String,
    /// Hand detector backend. Only `constant:<confidence>` is built in.
    #[arg(long)]
    detector: Option<String>,
    /// Report path; defaults to <pred>/report.json.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn runtime_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(egosynth_core::Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn print_stdout(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| runtime_io(Path::new("<stdout>"), e))
}

fn make_fixtures_cmd(args: MakeFixturesArgs, config: &PipelineConfig) -> Result<(), CliError> {
    let spec = FixtureSpec {
        size: args.size,
        videos: args.videos,
        frames: args.frames,
        clip_len: args.clip_len,
        noise: args.noise,
        seed: config.seed,
        ..FixtureSpec::default()
    };
    let manifest = make_fixtures(&spec, &args.out)?;
    info!("wrote {} clips", manifest.clips.len());
    print_stdout(&args.out.join("manifest.json").display().to_string())
}

fn build_manifest_cmd(args: BuildManifestArgs) -> Result<(), CliError> {
    let manifest = scan_dataset(&args.root, &args.name, args.clip_len)?;
    manifest.validate()?;
    let out = args.out.unwrap_or_else(|| args.root.join("manifest.json"));
    manifest.save(&out)?;
    info!("{} clips", manifest.clips.len());
    print_stdout(&out.display().to_string())
}

fn split_cmd(args: SplitArgs) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let spec = match args.strategy {
        Strategy::NewActions => SplitSpec::NewActions {
            train_fraction: args.train_fraction,
        },
        Strategy::NewObjects => SplitSpec::NewObjects {
            held_out: args.held_out_objects,
        },
        Strategy::NewSubjects => SplitSpec::NewSubjects {
            train: args.train_subjects,
            test: args.test_subjects,
        },
        Strategy::NewScenes => SplitSpec::NewScenes {
            train: args.train_scenes,
            test: args.test_scenes,
        },
    };
    let split = generate_split(&manifest, &spec)?;
    let (ntrain, ntest) = (split.train.len(), split.test.len());
    let (train, test) = split.into_manifests(&manifest);
    let dir = args
        .out_dir
        .unwrap_or_else(|| args.manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    train.save(&dir.join("train.json"))?;
    test.save(&dir.join("test.json"))?;
    print_stdout(&format!("train={ntrain} test={ntest}"))
}

fn train_cmd(args: TrainArgs, mut config: PipelineConfig) -> Result<(), CliError> {
    if let Some(steps) = args.steps {
        config.layout_stage.steps = steps;
        config.diffusion_stage.steps = steps;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    info!("resolved config hash {}", config.hash());
    let manifest = DatasetManifest::load(&args.manifest)?;
    let stages = match args.stage {
        StageArg::Layout => StageSelection::Layout,
        StageArg::Diffusion => StageSelection::Diffusion,
        StageArg::All => StageSelection::All,
    };
    let mut log = |stage: Stage, step: u64, loss: f64| {
        eprintln!("stage={} step={step} loss={loss}", stage.name());
    };
    train(&manifest, &config, stages, args.resume, &mut log)?;
    let path = config.output_dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).expect("config serializes") + "\n")
        .map_err(|e| runtime_io(&path, e))?;
    print_stdout(&config.output_dir.display().to_string())
}

fn infer_cmd(args: InferArgs, mut config: PipelineConfig) -> Result<(), CliError> {
    if args.translator.is_some() {
        config.translator_checkpoint = args.translator;
    }
    if args.denoiser.is_some() {
        config.denoiser_checkpoint = args.denoiser;
    }
    info!("resolved config hash {}", config.hash());
    let manifest = if args.input.is_dir() {
        frame_dir_manifest(&args.input)?
    } else {
        DatasetManifest::load(&args.input)?
    };
    let meta = infer_manifest(&manifest, &config, &args.out)?;
    info!("predicted {} clips", meta.clips.len());
    print_stdout(&args.out.display().to_string())
}

fn backends(detector: Option<&str>, seed: u64) -> Result<Backends, CliError> {
    let mut b = Backends::standard(seed);
    match detector {
        None => warn!("no hand detector registered; Feasi is reported as absent"),
        Some(spec) => {
            let c = spec
                .strip_prefix("constant:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|c| (0.0..=1.0).contains(c))
                .ok_or_else(|| CliError::Usage(format!("unknown detector {spec:?}; expected constant:<0..1>")))?;
            b.detector = Some(Box::new(ConstantDetector(c)));
        }
    }
    Ok(b)
}

fn load_frame_dir(dir: &Path) -> Result<Vec<Frame>, CliError> {
    Ok(sorted_files(dir, &["png"])?
        .iter()
        .map(|p| Frame::load_png(p))
        .collect::<egosynth_core::Result<_>>()?)
}

fn evaluate_cmd(args: EvaluateArgs, config: &PipelineConfig) -> Result<(), CliError> {
    info!("resolved config hash {}", config.hash());
    let backends = backends(args.detector.as_deref(), config.seed)?;
    let report: MetricReport = if args.gt.is_dir() {
        let pred = load_frame_dir(&args.pred)?;
        let gt = load_frame_dir(&args.gt)?;
        if pred.len() != gt.len() || gt.is_empty() {
            return Err(CliError::Runtime(egosynth_core::Error::InvalidInput(format!(
                "{} predicted frames vs {} ground-truth frames",
                pred.len(),
                gt.len()
            ))));
        }
        let name = args.gt.file_name().and_then(|n| n.to_str()).unwrap_or("frames");
        evaluate(&pred, &gt, &backends)?.with_labels(name, args.split.as_str())
    } else {
        let manifest = DatasetManifest::load(&args.gt)?;
        evaluate_predictions(&manifest, &args.pred, &backends, &args.split)?
    };
    if !report.is_finite() {
        warn!("report contains non-finite values");
    }
    let path = args.report.unwrap_or_else(|| args.pred.join("report.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")
        .map_err(|e| runtime_io(&path, e))?;
    print_stdout(report.to_table().trim_end())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut sets = cli.sets;
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    let config = settings::resolve(cli.config.as_deref(), &sets)?;
    match cli.command {
        Command::MakeFixtures(a) => make_fixtures_cmd(a, &config),
        Command::BuildManifest(a) => build_manifest_cmd(a),
        Command::Split(a) => split_cmd(a),
        Command::Train(a) => train_cmd(a, config),
        Command::Infer(a) => infer_cmd(a, config),
        Command::Evaluate(a) => evaluate_cmd(a, &config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let s_msg = s.to_string();
                if !msg.contains(&s_msg) {
                    msg.push_str(&format!(": {s_msg}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
