//! `prunepack` command line: data generation, the training phases,
//! evaluation, verification and report emission over one run directory.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prunepack::config::PairOrder;
use prunepack::Error;

#[derive(Parser)]
#[command(name = "prunepack", version, about = "Prune a multilingual translation model and adapt its freed weights pair by pair")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Clone, Debug)]
pub struct Flags {
    /// Experiment config (TOML). Defaults to <out>/config.toml when present.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run directory holding data, checkpoints, evaluations and reports.
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    pub out: PathBuf,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    pub preset: Option<String>,
    /// desc, asc, or a comma-separated list of pair languages.
    #[arg(long, global = true, value_name = "ORDER")]
    pub order: Option<String>,
    /// Adapt only these pairs (comma-separated).
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    pub pairs: Option<Vec<String>>,
    /// Give every adapted pair the same share of the freed weights.
    #[arg(long, global = true)]
    pub equal_share: bool,
    /// Keep all trained free weights for the last pair.
    #[arg(long, global = true)]
    pub no_prune_last: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    PlotData,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Dev,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic parallel corpus into <out>/data.
    GenData,
    /// Train the multilingual parent model.
    TrainMnmt,
    /// Prune the parent and retrain the surviving weights.
    PruneBase,
    /// Adapt each pair in order on the freed weights (resumable).
    Adapt,
    /// Fine-tune a full copy of the parent on each pair.
    FinetuneBaseline,
    /// Score every available system per pair and direction.
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Score all non-English directions through the shared weights.
    ZeroShot,
    /// Check frozen behavior and the capacity ledger of the adapted model.
    Verify,
    /// Write the interference, capacity, zero-shot and plot tables.
    Report {
        #[arg(long, value_enum, default_value = "all")]
        format: ReportFormat,
    },
    /// Every step above in sequence.
    RunAll,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Capacity(_) => 3,
        Error::Checkpoint(_) => 4,
        Error::MissingArtifacts(_) => 6,
        _ => 1,
    }
}

fn overrides(f: &Flags) -> Result<toml::Table, Error> {
    let mut top = toml::Table::new();
    let mut plan = toml::Table::new();
    if let Some(s) = f.seed {
        let s = i64::try_from(s).map_err(|_| Error::Config(format!("seed: {s} too large")))?;
        top.insert("seed".into(), s.into());
    }
    if let Some(p) = &f.preset {
        top.insert("preset".into(), p.clone().into());
    }
    if let Some(o) = &f.order {
        let v = match o.parse::<PairOrder>()? {
            PairOrder::Descending => "desc".into(),
            PairOrder::Ascending => "asc".into(),
            PairOrder::Explicit(l) => toml::Value::Array(l.into_iter().map(Into::into).collect()),
        };
        plan.insert("order".into(), v);
    }
    if let Some(p) = &f.pairs {
        plan.insert("pairs".into(), toml::Value::Array(p.iter().cloned().map(Into::into).collect()));
    }
    if f.equal_share {
        plan.insert("equal_share".into(), true.into());
    }
    if f.no_prune_last {
        plan.insert("prune_last".into(), false.into());
    }
    if !plan.is_empty() {
        top.insert("plan".into(), plan.into());
    }
    Ok(top)
}

fn run(cli: Cli) -> Result<u8, Error> {
    let ctx = context::Context::open(&cli.flags, overrides(&cli.flags)?)?;
    let name = match &cli.command {
        Command::GenData => "gen-data",
        Command::TrainMnmt => "train-mnmt",
        Command::PruneBase => "prune-base",
        Command::Adapt => "adapt",
        Command::FinetuneBaseline => "finetune-baseline",
        Command::Eval { .. } => "eval",
        Command::ZeroShot => "zero-shot",
        Command::Verify => "verify",
        Command::Report { .. } => "report",
        Command::RunAll => "run-all",
    };
    ctx.log_start(name)?;
    let code = match cli.command {
        Command::GenData => commands::gen_data(&ctx).map(|_| 0)?,
        Command::TrainMnmt => commands::train_mnmt(&ctx).map(|_| 0)?,
        Command::PruneBase => commands::prune_base(&ctx).map(|_| 0)?,
        Command::Adapt => commands::adapt(&ctx).map(|_| 0)?,
        Command::FinetuneBaseline => commands::finetune_baseline(&ctx).map(|_| 0)?,
        Command::Eval { split } => commands::eval(&ctx, split).map(|_| 0)?,
        Command::ZeroShot => commands::zero_shot(&ctx).map(|_| 0)?,
        Command::Verify => commands::verify(&ctx)?,
        Command::Report { format } => commands::report(&ctx, format).map(|_| 0)?,
        Command::RunAll => commands::run_all(&ctx)?,
    };
    ctx.log_finish(name, code)?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::MissingArtifacts(list) = &e {
                for a in list {
                    eprintln!("  missing: {a}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
