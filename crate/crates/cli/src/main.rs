//! `reasonseg`: curate, parse, transform, match, evaluate, report, split.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::FileConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or invalid input data (exit 1).
    Validation(String),
    /// Filesystem or network failure (exit 2).
    Io(String),
}

impl From<reasonseg::Error> for CliError {
    fn from(e: reasonseg::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "reasonseg", version, about = "Reasoning-segmentation dataset and evaluation tooling")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, env = "REASONSEG_SEED")]
    pub seed: Option<u64>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "REASONSEG_JOBS")]
    pub jobs: Option<usize>,

    /// TOML file with defaults for any flag.
    #[arg(long, global = true, env = "REASONSEG_CONFIG")]
    pub config: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a COCO dataset and build (and optionally run) generation prompts.
    Curate(CurateArgs),
    /// Parse model responses into dialogue records.
    Parse(ParseArgs),
    /// Convert records to another supervision mode and append its template.
    Transform(TransformArgs),
    /// Assign predicted masks to ground-truth instances per image.
    Match(MatchArgs),
    /// Score predictions: mask AP (inst) or gIoU/cIoU (sem).
    Evaluate(EvaluateArgs),
    /// Print a saved evaluation report.
    Report(ReportArgs),
    /// Seeded train/eval split of a record file, grouped by image.
    Split(SplitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Instseg,
    Qa,
    Caption,
}

impl From<Task> for reasonseg::curation::PromptKind {
    fn from(t: Task) -> Self {
        match t {
            Task::Instseg => Self::Instseg,
            Task::Qa => Self::Qa,
            Task::Caption => Self::Caption,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClientKind {
    Http,
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenterArg {
    Bbox,
    Centroid,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, env = "REASONSEG_MIN_IMAGE_SIDE")]
    pub min_image_side: Option<u32>,
    #[arg(long, env = "REASONSEG_MIN_AREA")]
    pub min_area: Option<u64>,
    #[arg(long, value_enum)]
    pub task: Task,
    /// Without a client only the prompts are written.
    #[arg(long, value_enum)]
    pub client: Option<ClientKind>,
    #[arg(long)]
    pub fixture_dir: Option<PathBuf>,
    #[arg(long, env = "REASONSEG_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "REASONSEG_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[arg(long, env = "REASONSEG_MODEL")]
    pub model: Option<String>,
    #[arg(long, env = "REASONSEG_IMAGE_ROOT")]
    pub image_root: Option<PathBuf>,
    #[arg(long, env = "REASONSEG_RETRIES")]
    pub retries: Option<u32>,
    #[arg(long, value_enum)]
    pub center: Option<CenterArg>,
    #[arg(long)]
    pub out: PathBuf,
    /// Itemized list of removed images and objects.
    #[arg(long)]
    pub dropped: Option<PathBuf>,
    /// The dataset after filtering, as COCO JSON.
    #[arg(long)]
    pub filtered_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Directory of `<image_id>.txt` files, or a jobs file written by `curate`.
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetMode {
    Semseg,
    Instseg,
    SidSemseg,
    SidInstseg,
    Pure,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub to: TargetMode,
    /// COCO file; needed to merge instances by category.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Category ids merged even in instance modes.
    #[arg(long, value_delimiter = ',')]
    pub uncountable: Vec<u64>,
    /// Convert without appending the task template.
    #[arg(long)]
    pub no_template: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub iou_weight: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dice_weight: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Inst,
    Sem,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// COCO file; in sem mode a mask JSONL is also accepted.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMode::Inst)]
    pub mode: EvalMode,
    /// Machine-readable report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub eval_fraction: f64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub eval_out: PathBuf,
}

/// Settings after merging flags, environment and config file.
pub struct Context {
    pub seed: u64,
    pub file: FileConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let jobs = cli.jobs.or(file.jobs).unwrap_or(0);
    // A pool may already exist when run in-process; that is not an error.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        file,
    };
    match cli.command {
        Command::Curate(a) => commands::curate(&ctx, a, jobs),
        Command::Parse(a) => commands::parse(&ctx, a),
        Command::Transform(a) => commands::transform(&ctx, a),
        Command::Match(a) => commands::match_cmd(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Report(a) => commands::report(a),
        Command::Split(a) => commands::split(&ctx, a),
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
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Validation(m) | CliError::Io(m)) = &e;
            eprintln!("error: {m}");
            ExitCode::from(e.exit_code())
        }
    }
}
