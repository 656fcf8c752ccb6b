use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tsa::cluster::{segment, Method};
use tsa::config::RunConfig;
use tsa::data_io::{
    load_features, load_labels, save_features, save_labels, FeatureFormat, LabelSequence,
};
use tsa::evaluate::{remove_background, score};
use tsa::model::{format_model, train_with, StopReason};
use tsa::plot::segmentation_svg;
use tsa::synth::{generate, SynthSpec};
use tsa::triplet::format_triplets;
use tsa::TsaError;

#[derive(Parser)]
#[command(name = "tsa", version, about = "Temporal-semantic aware action segmentation of a single video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic video with planted action segments.
    Synth(SynthArgs),
    /// Learn TSA features Z from per-frame features X.
    Train(TrainArgs),
    /// Cluster features into k actions.
    Segment(SegmentArgs),
    /// Score predicted labels against ground truth (JSON on stdout).
    Eval(EvalArgs),
    /// Render segmentation bars as SVG.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Binary,
}

fn feature_format(arg: Option<FormatArg>, path: &Path) -> FeatureFormat {
    match arg {
        Some(FormatArg::Text) => FeatureFormat::Text,
        Some(FormatArg::Binary) => FeatureFormat::Binary,
        None => FeatureFormat::from_path(path),
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_features: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, default_value_t = 6)]
    segments: usize,
    #[arg(long, default_value_t = 36)]
    min_frames: usize,
    #[arg(long, default_value_t = 44)]
    max_frames: usize,
    #[arg(long, default_value_t = 16)]
    dims: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0.15)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Add background segments labelled "background".
    #[arg(long)]
    background: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Breakfast,
    Inria,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Hyperparameter preset applied before the config file.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set learning_rate=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Learned features, always in the binary format.
    #[arg(long)]
    out_z: PathBuf,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the last triplets of every epoch to this file.
    #[arg(long)]
    dump_triplets: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    z: PathBuf,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// kmeans, finch, spectral or equal.
    #[arg(long, default_value = "kmeans")]
    method: String,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Ground-truth token of the background class.
    #[arg(long)]
    background: Option<String>,
    /// Fraction of background frames removed before scoring.
    #[arg(long, default_value_t = 0.75)]
    tau: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Prediction as `name=path`. Repeatable.
    #[arg(long = "pred", value_name = "NAME=PATH")]
    preds: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    User(String),
    Internal(String),
}

impl From<TsaError> for Failure {
    fn from(e: TsaError) -> Self {
        Failure::User(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("TSA_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::User(format!("TSA_SEED is not an unsigned integer: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::User(format!("{}: {e}", path.display())))
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let spec = SynthSpec {
        n_segments: a.segments,
        frames_per_segment: (a.min_frames, a.max_frames),
        dims: a.dims,
        n_action_classes: a.classes,
        noise_sigma: a.sigma,
        center_separation: a.separation,
        seed: resolve_seed(a.seed)?.unwrap_or(0),
        background: a.background,
    };
    eprintln!("# synth {spec:?}");
    let (x, y) = generate(&spec)?;
    save_features(&x, &a.out_features, feature_format(a.format, &a.out_features))?;
    save_labels(&y, &a.out_labels)?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut cfg = match a.preset {
        Some(Preset::Breakfast) => RunConfig::breakfast(),
        Some(Preset::Inria) => RunConfig::inria(),
        None => RunConfig::default(),
    };
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::User(format!("{}: {e}", path.display())))?;
        cfg.apply_str(&text)?;
    }
    for o in &a.overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Failure::User(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(key, value)?;
    }
    if let Some(seed) = resolve_seed(a.seed)? {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let x = load_features(&a.features, feature_format(a.format, &a.features))?;

    let mut log = String::new();
    for line in cfg.to_string().lines() {
        writeln!(log, "# {line}").unwrap();
    }
    eprint!("{log}");
    let mut triplets = String::new();
    let out = train_with(&x, &cfg, |report| {
        let line = report.log_line();
        eprintln!("{line}");
        log.push_str(&line);
        log.push('\n');
        if a.dump_triplets.is_some() {
            writeln!(triplets, "# epoch {}", report.epoch).unwrap();
            triplets.push_str(&format_triplets(report.triplets));
        }
    })?;
    let stop = match out.state.stop {
        StopReason::MaxEpochs => "max_epochs",
        StopReason::Converged => "converged",
        StopReason::Diverged => "diverged",
    };
    writeln!(log, "# stop {stop} after {} epochs", out.state.epoch).unwrap();

    save_features(&out.z, &a.out_z, FeatureFormat::Binary)?;
    write_file(&a.out_model, format_model(&out.model))?;
    if let Some(path) = &a.log {
        write_file(path, &log)?;
    }
    if let Some(path) = &a.dump_triplets {
        write_file(path, &triplets)?;
    }
    match out.state.diagnostic {
        Some(d) if out.state.stop == StopReason::Diverged => Err(Failure::User(format!(
            "training diverged ({d}); wrote the last finite state"
        ))),
        _ => Ok(()),
    }
}

fn cmd_segment(a: SegmentArgs) -> CmdResult {
    let method: Method = a.method.parse()?;
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    eprintln!("# segment method={method} k={} seed={seed}", a.k);
    let z = load_features(&a.z, feature_format(a.format, &a.z))?;
    let seg = segment(&z, method, a.k, seed)?;
    save_labels(&seg.to_label_sequence(), &a.out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    use rand::SeedableRng;
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    let pred = load_labels(&a.pred, None)?;
    let gt = load_labels(&a.gt, a.background.as_deref())?;
    if pred.len() != gt.len() {
        return Err(Failure::User(format!(
            "prediction has {} frames, ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    let (p, g) = match &a.background {
        Some(_) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (p, g, _) = remove_background(&pred.labels, &gt, a.tau, &mut rng)?;
            (p, g.labels)
        }
        None => (pred.labels, gt.labels),
    };
    println!("{}", score(&p, &g)?.to_json());
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> CmdResult {
    let gt = load_labels(&a.gt, None)?;
    let mut preds = Vec::with_capacity(a.preds.len());
    for spec in &a.preds {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| Failure::User(format!("--pred expects NAME=PATH, got {spec:?}")))?;
        let labels: LabelSequence = load_labels(Path::new(path), None)?;
        preds.push((name.to_string(), labels.labels));
    }
    write_file(&a.out, segmentation_svg(&gt, &preds)?)
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = std::panic::catch_unwind(|| run(cli))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(Failure::Internal(msg))
        });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
