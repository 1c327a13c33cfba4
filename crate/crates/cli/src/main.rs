use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use lowlight_core::batch::{degrade_batch, replay_batch, replay_one, BatchRequest};
use lowlight_core::config::CONFIG_ENV;
use lowlight_core::maet::{self, Objective, ToyMaetModel, TrainOptions};
use lowlight_core::synth::SCHEMA_VERSION;
use lowlight_core::verify::{run_verification, VerifySizes};
use lowlight_core::{load_config, AppConfig, CcmMode, Error, Method, QuantMode};

#[derive(Parser)]
#[command(name = "lowlight", about = "Physically based low-light image synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade every PNG/PPM in a directory with the ISP pipeline.
    Degrade(DegradeArgs),
    /// Degrade a directory with one of the comparison synthesizers.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[command(flatten)]
        common: DegradeArgs,
    },
    /// Run the statistical conformance suite and write a JSON report.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train the toy multitask model.
    MaetTrain(TrainArgs),
    /// Evaluate a trained toy model on held-out samples.
    MaetEval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the metrics here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-render degraded outputs from their sources and sidecars and
    /// require bit-identical results.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Apply the smoothstep tone curve after gamma.
    #[arg(long)]
    tone_remap: bool,
    #[arg(long, value_enum)]
    quant_mode: Option<QuantArg>,
    #[arg(long, value_enum)]
    ccm_mode: Option<CcmArg>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = TrainOptions::default().steps)]
    steps: usize,
    #[arg(long, default_value_t = TrainOptions::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainOptions::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainOptions::default().warmup_steps)]
    warmup_steps: usize,
    /// Keep the learning rate constant after warm-up.
    #[arg(long)]
    no_cosine: bool,
    #[arg(long, default_value_t = 1.0)]
    deg_lr_scale: f64,
    #[arg(long)]
    seed: u64,
    /// Drop the orthogonality penalty (ablation).
    #[arg(long)]
    no_ort: bool,
    /// Held-out samples evaluated after training.
    #[arg(long, default_value_t = 1000)]
    holdout: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Source directory of a batch (with --out).
    #[arg(long = "in", requires = "output", conflicts_with_all = ["source", "sidecar", "image"])]
    input: Option<PathBuf>,
    /// Output directory of a batch, containing manifest.json.
    #[arg(long = "out", requires = "input")]
    output: Option<PathBuf>,
    #[arg(long, requires_all = ["sidecar", "image"])]
    source: Option<PathBuf>,
    #[arg(long, requires_all = ["source", "image"])]
    sidecar: Option<PathBuf>,
    /// Stored degraded image to compare against.
    #[arg(long, requires_all = ["source", "sidecar"])]
    image: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Retinex,
    Invgamma,
    InvgammaPoisson,
    InvgammaMixed,
    Linear,
    OursMosaic,
}

impl From<BaselineMethod> for Method {
    fn from(m: BaselineMethod) -> Method {
        match m {
            BaselineMethod::Retinex => Method::Retinex,
            BaselineMethod::Invgamma => Method::Invgamma,
            BaselineMethod::InvgammaPoisson => Method::InvgammaPoisson,
            BaselineMethod::InvgammaMixed => Method::InvgammaMixed,
            BaselineMethod::Linear => Method::Linear,
            BaselineMethod::OursMosaic => Method::OursMosaic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantArg {
    Literal,
    Bitdepth,
}

#[derive(Clone, Copy, ValueEnum)]
enum CcmArg {
    Pick,
    Mix,
}

/// Exit code 1 (`Failed`) or 2 (`Usage`: bad flags or configuration).
enum Failure {
    Failed(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::Config(_) | Error::Parameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Failed(e.to_string()),
        }
    }
}

fn version() -> String {
    format!(
        "{} (sidecar schema {SCHEMA_VERSION}, {}-{}, {} build)",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::ARCH,
        std::env::consts::OS,
        if cfg!(debug_assertions) { "debug" } else { "release" },
    )
}

fn config_from(path: Option<&Path>) -> Result<AppConfig, Failure> {
    let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    let config = match path.map(Path::to_path_buf).or(env) {
        Some(p) => load_config(&p).map_err(|e| match e {
            Error::Io { .. } => Failure::Usage(e.to_string()),
            other => other.into(),
        })?,
        None => AppConfig::default(),
    };
    init_logging(&config.io.log_level);
    Ok(config)
}

fn init_logging(level: &str) {
    let env = env_logger::Env::default().default_filter_or(level);
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn degrade(method: Method, args: DegradeArgs) -> Result<(), Failure> {
    let mut config = config_from(args.config.as_deref())?;
    let p = &mut config.pipeline;
    p.tone_remap |= args.tone_remap;
    if let Some(q) = args.quant_mode {
        p.quant_mode = match q {
            QuantArg::Literal => QuantMode::Literal,
            QuantArg::Bitdepth => QuantMode::Bitdepth,
        };
    }
    if let Some(c) = args.ccm_mode {
        p.ccm_mode = match c {
            CcmArg::Pick => CcmMode::Pick,
            CcmArg::Mix => CcmMode::Mix,
        };
    }
    let manifest = degrade_batch(
        &config,
        &BatchRequest {
            input_dir: args.input,
            output_dir: args.output.clone(),
            method,
            seed: args.seed,
            jobs: args.jobs,
        },
    )?;
    let s = &manifest.summary;
    println!(
        "{} images, {} failed, {} samples clipped; manifest in {}",
        s.images,
        s.failures,
        s.clipped_samples,
        args.output.display()
    );
    if s.failures > 0 {
        return Err(Failure::Failed(format!("{} inputs could not be degraded", s.failures)));
    }
    Ok(())
}

fn verify(config: Option<PathBuf>, seed: u64, report: PathBuf) -> Result<(), Failure> {
    let config = config_from(config.as_deref())?;
    let r = run_verification(&config, seed, VerifySizes::default())?;
    r.write(&report)?;
    for e in &r.entries {
        println!("{} {}", if e.pass { "PASS" } else { "FAIL" }, e.name);
    }
    if !r.pass {
        return Err(Failure::Failed(format!("{} checks failed", r.failures().count())));
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Failure::Failed(format!("{}: {e}", path.display())))
}

fn maet_train(args: TrainArgs) -> Result<(), Failure> {
    let config = config_from(args.config.as_deref())?;
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::Failed(format!("{}: {e}", args.out.display())))?;
    let opts = TrainOptions {
        steps: args.steps,
        lr: args.lr,
        deg_lr_scale: args.deg_lr_scale,
        batch_size: args.batch_size,
        seed: args.seed,
        use_ort: !args.no_ort,
        warmup_steps: args.warmup_steps,
        cosine_decay: !args.no_cosine,
        ..TrainOptions::default()
    };
    opts.validate()?;
    log::info!("generating {} training samples", args.n);
    let data = maet::make_toy_dataset(args.n, args.seed, &config)?;
    let mut model = ToyMaetModel::new(args.seed);
    let report = maet::train(&mut model, &data, &opts)?;
    report.write_csv(&args.out.join("loss_curve.csv"))?;
    model.save(&args.out.join("model.bin"))?;
    let objective = Objective::with_ort(opts.use_ort);
    let train_eval = maet::evaluate(&model, &data, objective)?;
    let mut metrics = serde_json::json!({
        "options": opts,
        "config_hash": config.hash(),
        "train": train_eval,
    });
    if args.holdout > 0 {
        let held = maet::make_toy_dataset_range(maet::HOLDOUT_STREAM, args.holdout, args.seed, &config)?;
        metrics["holdout"] = serde_json::to_value(maet::evaluate(&model, &held, objective)?).expect("serializable");
    }
    write_json(&args.out.join("metrics.json"), &metrics)?;
    println!("{}", serde_json::to_string_pretty(&metrics).expect("serializable"));
    Ok(())
}

fn maet_eval(model: PathBuf, n: usize, seed: u64, config: Option<PathBuf>, report: Option<PathBuf>) -> Result<(), Failure> {
    let config = config_from(config.as_deref())?;
    let model = ToyMaetModel::load(&model)?;
    let held = maet::make_toy_dataset_range(maet::HOLDOUT_STREAM, n, seed, &config)?;
    let eval = maet::evaluate(&model, &held, Objective::FULL)?;
    let value = serde_json::to_value(&eval).expect("serializable");
    if let Some(path) = report {
        write_json(&path, &value)?;
    }
    println!("{}", serde_json::to_string_pretty(&value).expect("serializable"));
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<(), Failure> {
    let config = config_from(args.config.as_deref())?;
    match (args.input, args.output, args.source, args.sidecar, args.image) {
        (Some(input), Some(output), ..) => {
            let summary = replay_batch(&config, &input, &output)?;
            for m in &summary.mismatches {
                eprintln!("{m}");
            }
            println!("{} replayed, {} mismatched", summary.checked, summary.mismatches.len());
            if !summary.mismatches.is_empty() {
                return Err(Failure::Failed(format!("{} outputs did not replay", summary.mismatches.len())));
            }
            Ok(())
        }
        (_, _, Some(source), Some(sidecar), Some(image)) => {
            replay_one(&config, &source, &sidecar, &image)?;
            println!("{}: identical", image.display());
            Ok(())
        }
        _ => Err(Failure::Usage(
            "replay needs either --in and --out, or --source, --sidecar and --image".into(),
        )),
    }
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(version().into_boxed_str());
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Degrade(args) => degrade(Method::Ours, args),
        Command::Baseline { method, common } => degrade(method.into(), common),
        Command::Verify { config, seed, report } => verify(config, seed, report),
        Command::MaetTrain(args) => maet_train(args),
        Command::MaetEval {
            model,
            n,
            seed,
            config,
            report,
        } => maet_eval(model, n, seed, config, report),
        Command::Replay(args) => replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
