use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairlens_cli::audit::run_audit;
use fairlens_cli::config::AuditConfig;
use fairlens_cli::prompts_cmd::likert_document;
use fairlens_cli::report_cmd::{run_report, ReportJob};
use fairlens_cli::stats_cmd::{parse_groups, run_stats, Comparison, StatsRequest, TestName};
use fairlens_cli::CliError;
use fairlens_core::metrics::{MetricKind, MetricTable};
use fairlens_core::prompts::Axis;
use fairlens_core::report::ReportFormat;
use fairlens_core::stats::{write_results_csv, EpsilonSquaredFormula, TieHandling};

#[derive(Parser)]
#[command(name = "fairlens", version, about = "Bias audits over precomputed vision-language embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every configured model, dataset and language and write the metric bundle.
    Audit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a significance test over a metric CSV.
    Stats(StatsArgs),
    /// Render tables described by a JSON job file.
    Report {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Summarise native-speaker ratings of translated captions.
    ValidatePrompts {
        #[arg(long)]
        ratings: PathBuf,
        /// Also write the table here (`.csv` or `.md`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StatsArgs {
    /// Long-form metric CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    test: TestName,
    #[arg(long, default_value = "gender_skew_max")]
    metric: MetricKind,
    /// Comma-separated axes; all axes of the metric by default.
    #[arg(long, value_delimiter = ',')]
    axis: Vec<Axis>,
    /// Comma-separated datasets; every dataset in the input by default.
    #[arg(long, value_delimiter = ',')]
    dataset: Vec<String>,
    /// Comma-separated languages to restrict to.
    #[arg(long, value_delimiter = ',')]
    languages: Option<Vec<String>>,
    /// `MODEL_A,MODEL_B`; A is the first arm.
    #[arg(long, conflicts_with = "groups")]
    pair: Option<String>,
    /// Language groups such as `en,es,fr:pt,hi,xh`; needs --model.
    #[arg(long, requires = "model")]
    groups: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Continuity correction in normal approximations.
    #[arg(long)]
    continuity: bool,
    /// Largest sample handled by exact enumeration.
    #[arg(long)]
    exact_max: Option<usize>,
    #[arg(long, default_value = "h_over_n_minus_one", value_parser = parse_formula)]
    epsilon_formula: EpsilonSquaredFormula,
    /// Signed-rank tie handling: `standard` or `midrank`.
    #[arg(long, default_value = "standard", value_parser = parse_ties)]
    ties: TieHandling,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_formula(s: &str) -> Result<EpsilonSquaredFormula, String> {
    match s {
        "h_over_n_minus_one" => Ok(EpsilonSquaredFormula::HOverNMinusOne),
        "adjusted" => Ok(EpsilonSquaredFormula::Adjusted),
        _ => Err(format!("unknown formula {s:?}")),
    }
}

fn parse_ties(s: &str) -> Result<TieHandling, String> {
    match s {
        "standard" => Ok(TieHandling::Standard),
        "midrank" => Ok(TieHandling::Midrank),
        _ => Err(format!("unknown tie handling {s:?}")),
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FAIRLENS_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("FAIRLENS_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Internal(e.to_string()))
}

fn stats(args: StatsArgs) -> Result<(), CliError> {
    let comparison = match (&args.pair, &args.groups, &args.model) {
        (Some(pair), _, _) => {
            let (a, b) =
                pair.split_once(',').ok_or_else(|| CliError::Config(format!("--pair expects A,B, got {pair:?}")))?;
            Comparison::Pair { a: a.trim().into(), b: b.trim().into() }
        }
        (None, Some(g), Some(model)) => Comparison::Groups { model: model.clone(), groups: parse_groups(g)? },
        (None, None, Some(model)) => Comparison::Single { model: model.clone() },
        _ => return Err(CliError::Config("one of --pair, --groups or --model is required".into())),
    };
    let bytes = fs::read(&args.input).map_err(|e| CliError::Config(format!("{}: {e}", args.input.display())))?;
    let table = MetricTable::read_csv(bytes.as_slice())
        .map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let mut req = StatsRequest::new(args.test, args.metric, comparison);
    req.axes = args.axis;
    req.datasets = args.dataset;
    req.languages = args.languages;
    req.continuity = args.continuity;
    req.exact_max = args.exact_max;
    req.epsilon_formula = args.epsilon_formula;
    req.ties = args.ties;
    let rows = run_stats(&table, &req)?;
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &rows).map_err(|e| CliError::Internal(e.to_string()))?;
    match args.out {
        Some(p) => fs::write(&p, buf).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(&buf).map_err(|e| CliError::Internal(e.to_string())),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Audit { config } => {
            let (cfg, bytes) = AuditConfig::load(&config)?;
            let outcome = run_audit(&cfg, &bytes)?;
            for p in outcome.written {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Stats(args) => stats(args),
        Command::Report { spec } => {
            let (job, bytes) = ReportJob::load(&spec)?;
            for p in run_report(&job, &bytes)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::ValidatePrompts { ratings, out } => {
            let doc = likert_document(&ratings)?;
            print!("{}", doc.to_markdown());
            if let Some(p) = out {
                let format =
                    if p.extension().is_some_and(|e| e == "csv") { ReportFormat::Csv } else { ReportFormat::Markdown };
                fs::write(&p, doc.render(format)).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fairlens: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
