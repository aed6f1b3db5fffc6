use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mondrian_cli::experiment::{
    self, DataSource, ExperimentResult, InconsistencyConfig, LearningCurveConfig, RateCheckConfig,
    RateTarget,
};
use mondrian_cli::model::{self, ModelFile, TrainConfig};
use mondrian_cli::{parse_checkpoints, parse_synth};
use mondrian_forest::data::load_csv;
use mondrian_forest::{verify, ScheduleSpec, Task, VoteRule};

#[derive(Parser)]
#[command(
    name = "mondrian",
    version,
    about = "Online Mondrian forests and their verification suite"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test error at increasing training-set sizes.
    LearningCurve(LearningCurveArgs),
    /// Fixed versus increasing lifetime on the band distribution.
    InconsistencyDemo(InconsistencyArgs),
    /// Empirical convergence slope of the quadratic risk.
    RateCheck(RateCheckArgs),
    /// Run the distributional checks; exits nonzero if any fails.
    Verify(VerifyArgs),
    /// Train (or continue training) a model from a CSV file.
    Train(TrainArgs),
    /// Predict a features-only CSV with a trained model.
    Predict(PredictArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of trees K.
    #[arg(long, default_value_t = 10)]
    trees: usize,
    /// Comma-separated sample sizes, e.g. 1e3,1e4,1e5.
    #[arg(long)]
    checkpoints: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    test_size: usize,
    /// JSON output path; curve data goes to the same path with a .csv
    /// extension. Prints JSON to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the synthetic training stream to this CSV.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct LearningCurveArgs {
    #[command(flatten)]
    common: Common,
    /// `fixed:<lambda>` or `power:<c>`.
    #[arg(long, default_value = "power:1")]
    schedule: String,
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    dataset: Option<PathBuf>,
    /// `classify:d=2,n=...`, `band:eps=...` (see the README).
    #[arg(long)]
    synth: Option<String>,
    /// CSV has no header row.
    #[arg(long)]
    no_header: bool,
    /// 0-based label column; defaults to the last.
    #[arg(long)]
    label_column: Option<usize>,
    #[arg(long, default_value = "majority")]
    rule: String,
}

#[derive(Args)]
struct InconsistencyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 2.0)]
    lifetime: f64,
    #[arg(long, default_value_t = 1.0)]
    power_constant: f64,
    #[arg(long, default_value = "majority")]
    rule: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum RateKind {
    Regress,
    ClassifyProba,
}

#[derive(Args)]
struct RateCheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "regress")]
    target: RateKind,
    #[arg(long, short = 'd', default_value_t = 1)]
    dimension: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Constant c of the schedule lambda_n = c n^(1/(d+2)).
    #[arg(long, default_value_t = 1.0)]
    power_constant: f64,
    #[arg(long, default_value_t = 1000)]
    fit_from: usize,
    #[arg(long, default_value_t = 0.2)]
    slope_tolerance: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Also write the JSON lines here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classify,
    Regress,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classify => Task::Classify,
            TaskArg::Regress => Task::Regress,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "classify")]
    task: TaskArg,
    #[arg(long, default_value_t = 10)]
    trees: usize,
    #[arg(long, default_value = "power:1")]
    schedule: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model to continue training; its normalizer and schedule are kept.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    no_header: bool,
    #[arg(long)]
    label_column: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Features-only CSV.
    #[arg(long)]
    input: PathBuf,
    /// Prediction CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_header: bool,
    #[arg(long, default_value = "majority")]
    rule: String,
}

fn checkpoints(common: &Common) -> Result<Vec<usize>> {
    common
        .checkpoints
        .as_deref()
        .map(parse_checkpoints)
        .transpose()
        .map(Option::unwrap_or_default)
}

fn emit(result: &ExperimentResult, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(result)?;
    match out {
        Some(path) => {
            std::fs::write(path, json + "\n")
                .with_context(|| format!("write {}", path.display()))?;
            let csv = path.with_extension("csv");
            std::fs::write(&csv, result.to_csv())
                .with_context(|| format!("write {}", csv.display()))?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn dump(stream: &mondrian_forest::data::SampleStream, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    stream.write_csv(file)?;
    Ok(())
}

fn learning_curve(args: LearningCurveArgs) -> Result<()> {
    let c = &args.common;
    let checkpoints = checkpoints(c)?;
    let data = match (&args.dataset, &args.synth) {
        (Some(path), _) => {
            let stream = load_csv(path, !args.no_header, args.label_column, Task::Classify)?;
            DataSource::from_csv(stream, c.test_size)?
        }
        (None, Some(text)) => {
            let mut spec = parse_synth(text, c.seed)?;
            if let Some(&last) = checkpoints.last() {
                spec.n = last;
            }
            if let Some(path) = &c.dump {
                dump(&spec.generate()?, path)?;
            }
            DataSource::Synth(spec)
        }
        (None, None) => bail!("one of --dataset or --synth is required"),
    };
    let cfg = LearningCurveConfig {
        data,
        trees: c.trees,
        schedule: args.schedule.parse::<ScheduleSpec>()?,
        checkpoints,
        test_size: c.test_size,
        seed: c.seed,
        rule: args.rule.parse::<VoteRule>()?,
    };
    emit(&experiment::learning_curve(&cfg)?, c.out.as_deref())
}

fn inconsistency(args: InconsistencyArgs) -> Result<()> {
    let c = &args.common;
    let mut checkpoints = checkpoints(c)?;
    if checkpoints.is_empty() {
        checkpoints = vec![1_000, 10_000, 50_000];
    }
    let cfg = InconsistencyConfig {
        lifetime: args.lifetime,
        power_constant: args.power_constant,
        trees: c.trees,
        checkpoints,
        test_size: c.test_size,
        seed: c.seed,
        rule: args.rule.parse()?,
    };
    if let Some(path) = &c.dump {
        let eps = mondrian_forest::data::band_epsilon(cfg.lifetime);
        let n = *cfg.checkpoints.last().expect("nonempty");
        dump(&mondrian_forest::data::synth_band(eps, n, cfg.seed)?, path)?;
    }
    emit(&experiment::inconsistency_demo(&cfg)?, c.out.as_deref())
}

fn rate_check(args: RateCheckArgs) -> Result<()> {
    let c = &args.common;
    let mut checkpoints = checkpoints(c)?;
    if checkpoints.is_empty() {
        checkpoints = vec![1_000, 4_000, 16_000, 64_000];
    }
    let cfg = RateCheckConfig {
        target: match args.target {
            RateKind::Regress => RateTarget::Regress,
            RateKind::ClassifyProba => RateTarget::ClassifyProba,
        },
        dimension: args.dimension,
        noise_sd: args.sigma,
        trees: c.trees,
        power_constant: args.power_constant,
        checkpoints,
        test_size: c.test_size,
        seed: c.seed,
        fit_from: args.fit_from,
        slope_tolerance: args.slope_tolerance,
    };
    if let Some(path) = &c.dump {
        let n = *cfg.checkpoints.last().expect("nonempty");
        let spec = match cfg.target {
            RateTarget::Regress => mondrian_forest::data::SynthSpec::lipschitz_regress(
                cfg.dimension,
                n,
                cfg.seed,
                cfg.noise_sd,
            ),
            RateTarget::ClassifyProba => {
                mondrian_forest::data::SynthSpec::lipschitz_classify(cfg.dimension, n, cfg.seed)
            }
        };
        dump(&spec.generate()?, path)?;
    }
    emit(&experiment::rate_check(&cfg)?, c.out.as_deref())
}

fn run_verify(args: VerifyArgs) -> Result<bool> {
    let reports = verify::canonical_suite(args.seed, args.trials)?;
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
        eprintln!("{}", r.summary());
    }
    std::io::stdout().write_all(lines.as_bytes())?;
    if let Some(path) = &args.out {
        std::fs::write(path, &lines).with_context(|| format!("write {}", path.display()))?;
    }
    Ok(reports.iter().all(|r| r.verdict.passed()))
}

fn train(args: TrainArgs) -> Result<()> {
    let summary = model::train(&TrainConfig {
        dataset: args.dataset,
        header: !args.no_header,
        label_column: args.label_column,
        task: args.task.into(),
        trees: args.trees,
        schedule: args.schedule.parse()?,
        seed: args.seed,
        resume: args.resume,
        out: args.out,
    })?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let m = ModelFile::load(&args.model)?;
    let input = std::fs::File::open(&args.input)
        .with_context(|| format!("open {}", args.input.display()))?;
    let rule: VoteRule = args.rule.parse()?;
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("create {}", path.display()))?;
            model::predict(&m, input, !args.no_header, rule, file)?;
        }
        None => {
            model::predict(&m, input, !args.no_header, rule, std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::LearningCurve(a) => learning_curve(a).map(|_| true),
        Command::InconsistencyDemo(a) => inconsistency(a).map(|_| true),
        Command::RateCheck(a) => rate_check(a).map(|_| true),
        Command::Verify(a) => run_verify(a),
        Command::Train(a) => train(a).map(|_| true),
        Command::Predict(a) => predict(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
