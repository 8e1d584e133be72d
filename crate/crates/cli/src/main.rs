//! Command-line harness for probing how expressions of certainty and
//! uncertainty in prompts change language-model question-answering
//! behaviour, and for analyzing marker frequencies in text corpora.

mod config;
mod corpus_cmd;
mod run;
mod teach_cmd;

use anyhow::Result;
use clap::{Parser, Subcommand};
use config::{load_file_config, resolve, BackendArgs, RunArgs};
use run::{DatasetArgs, ReportAxis};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "epiprobe", version, about, propagate_version = true)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Inspect and validate the marker-template registry.
    Templates {
        #[command(subcommand)]
        cmd: TemplatesCmd,
    },
    /// Probe a model with marker-prefixed prompts, then score and report.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Probe with numerical-certainty templates over a percentage grid.
    Numeric {
        #[command(subcommand)]
        cmd: NumericCmd,
    },
    /// Count markers and stated percentages in JSONL corpora.
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Teach marker emission in-context and evaluate calibration.
    Teach {
        #[command(subcommand)]
        cmd: TeachCmd,
    },
    /// Inspect or clear the on-disk completion cache.
    Cache {
        #[command(subcommand)]
        cmd: CacheCmd,
    },
}

#[derive(Subcommand)]
enum TemplatesCmd {
    /// Print every template with its feature coding.
    List {
        /// Registry TSV (defaults to the built-in set).
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Check registry invariants; nonzero exit on violations.
    Validate {
        #[arg(long)]
        registry: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Probe every (item, template) pair and persist the run.
    Run {
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Registry TSV (defaults to the built-in set).
        #[arg(long)]
        registry: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a run's records against its items.
    Score {
        /// Run directory holding records.jsonl and items.jsonl.
        #[arg(long)]
        run: PathBuf,
        /// Reject span matches preceded by a negation token.
        #[arg(long, default_value_t = false)]
        negation_guard: bool,
        /// Answer-search window in completion steps.
        #[arg(long, default_value_t = 10)]
        max_steps: usize,
    },
    /// Aggregate a scored run by a feature axis (or per template).
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Feature axis to group by.
        #[arg(long, value_enum)]
        by: ReportAxis,
        /// Bootstrap resamples for confidence intervals (config key
        /// `n_resamples` applies when the flag is absent).
        #[arg(long)]
        n_resamples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum NumericCmd {
    /// Probe numeric-certainty templates over the percentage grid.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Grid points (strictly increasing, 0-100), e.g. --grid 0,50,100.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<u8>>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Per-template accuracy curves and calibration error for a scored run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Count pattern occurrences per section.
    Count {
        /// JSONL corpus (plain, .gz, or .zst).
        #[arg(long)]
        input: PathBuf,
        /// Pattern file: one expression per line.
        #[arg(long)]
        patterns: PathBuf,
        #[command(flatten)]
        extract: corpus_cmd::ExtractArgs,
        /// Write corpus_report.csv/json here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of stated percentages ("NN%").
    PctHist {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        extract: corpus_cmd::ExtractArgs,
        /// Keep digit runs preceded by ':' (markup like width:100%).
        #[arg(long, default_value_t = false)]
        no_css_filter: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uniformly sample occurrences of one pattern with context.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        pattern: String,
        #[arg(short, long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 60)]
        context_chars: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        extract: corpus_cmd::ExtractArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TeachCmd {
    /// Build a confidence-balanced few-shot pool from a scored run.
    Build {
        /// Scored run directory (uses its standard-template records).
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        teach: teach_cmd::TeachArgs,
        #[arg(long, default_value_t = 10)]
        buckets: usize,
        #[arg(long, default_value_t = 48)]
        total: usize,
        /// Pool file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate completions under a taught pool and record emissions.
    Run {
        #[arg(long)]
        pool: PathBuf,
        /// Query items (JSONL).
        #[arg(long)]
        items: PathBuf,
        /// Emissions JSONL to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score recorded emissions against the threshold rule.
    Evaluate {
        #[arg(long)]
        emissions: PathBuf,
        #[command(flatten)]
        teach: teach_cmd::TeachArgs,
    },
}

#[derive(Subcommand)]
enum CacheCmd {
    /// Entry count and byte size of the cache directory.
    Stats {
        #[arg(long)]
        cache_dir: PathBuf,
    },
    /// Delete every cache entry.
    Clear {
        #[arg(long)]
        cache_dir: PathBuf,
    },
}

fn templates_list(registry: Option<PathBuf>) -> Result<()> {
    use std::io::Write;
    let registry = run::load_registry(registry.as_deref())?;
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let mut emit = |line: String| -> Result<bool> {
        match writeln!(out, "{line}") {
            Ok(()) => Ok(true),
            // Quit quietly when the reader (e.g. `head`) hangs up.
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(false),
            Err(e) => Err(e.into()),
        }
    };
    if !emit(format!(
        "{:<24} {:<13} {:<12} {:<4} {:<4} {:<4} {:<4} surface",
        "id", "strength", "shield", "evid", "fact", "src", "1p"
    ))? {
        return Ok(());
    }
    for t in registry.all_variants() {
        let f = t.features;
        if !emit(format!(
            "{:<24} {:<13} {:<12} {:<4} {:<4} {:<4} {:<4} {:?}",
            t.id,
            f.strength.label(),
            f.shield.label(),
            f.evidential,
            f.factive,
            f.sourced,
            f.first_person,
            t.surface
        ))? {
            return Ok(());
        }
    }
    Ok(())
}

fn templates_validate(registry: Option<PathBuf>) -> Result<ExitCode> {
    let registry = run::load_registry(registry.as_deref())?;
    let report = registry.validate();
    println!(
        "{} templates, {} violations",
        registry.markers().len(),
        report.violations.len()
    );
    for warning in &report.warnings {
        println!("warning: {warning}");
    }
    for violation in &report.violations {
        println!("violation: {violation}");
    }
    Ok(if report.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let file = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Commands::Templates { cmd } => match cmd {
            TemplatesCmd::List { registry } => {
                templates_list(registry)?;
                Ok(ExitCode::SUCCESS)
            }
            TemplatesCmd::Validate { registry } => templates_validate(registry),
        },
        Commands::Eval { cmd } => {
            match cmd {
                EvalCmd::Run {
                    out,
                    dataset,
                    registry,
                    backend,
                    run: run_args,
                } => {
                    let settings = resolve(&backend, &run_args, &file);
                    run::eval_run(&out, &dataset, registry.as_deref(), &settings)?;
                }
                EvalCmd::Score {
                    run,
                    negation_guard,
                    max_steps,
                } => run::eval_score(&run, negation_guard, max_steps)?,
                EvalCmd::Report {
                    run,
                    by,
                    n_resamples,
                    seed,
                } => {
                    let n_resamples = n_resamples.or(file.n_resamples).unwrap_or(2000);
                    run::eval_report(&run, by, n_resamples, seed)?
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Commands::Numeric { cmd } => {
            match cmd {
                NumericCmd::Run {
                    out,
                    dataset,
                    grid,
                    backend,
                    run: run_args,
                } => {
                    let settings = resolve(&backend, &run_args, &file);
                    run::numeric_run(&out, &dataset, grid.as_deref(), &settings)?;
                }
                NumericCmd::Report { run } => run::numeric_report_cmd(&run)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Commands::Corpus { cmd } => {
            match cmd {
                CorpusCmd::Count {
                    input,
                    patterns,
                    extract,
                    out,
                } => corpus_cmd::corpus_count(&input, &patterns, &extract, out.as_deref())?,
                CorpusCmd::PctHist {
                    input,
                    extract,
                    no_css_filter,
                    out,
                } => corpus_cmd::corpus_pct_hist(&input, &extract, !no_css_filter, out.as_deref())?,
                CorpusCmd::Sample {
                    input,
                    pattern,
                    n,
                    context_chars,
                    seed,
                    extract,
                    out,
                } => corpus_cmd::corpus_sample(
                    &input,
                    &pattern,
                    n,
                    context_chars,
                    seed,
                    &extract,
                    out.as_deref(),
                )?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Commands::Teach { cmd } => {
            match cmd {
                TeachCmd::Build {
                    run,
                    teach,
                    buckets,
                    total,
                    out,
                } => teach_cmd::teach_build(&run, &teach, buckets, total, &out)?,
                TeachCmd::Run {
                    pool,
                    items,
                    out,
                    backend,
                    run: run_args,
                } => {
                    let settings = resolve(&backend, &run_args, &file);
                    teach_cmd::teach_run(&pool, &items, &out, &settings)?;
                }
                TeachCmd::Evaluate { emissions, teach } => {
                    teach_cmd::teach_evaluate(&emissions, &teach)?
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Commands::Cache { cmd } => {
            match cmd {
                CacheCmd::Stats { cache_dir } => teach_cmd::cache_stats(&cache_dir)?,
                CacheCmd::Clear { cache_dir } => teach_cmd::cache_clear(&cache_dir)?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
