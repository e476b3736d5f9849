//! The `srs` command line.
//!
//! Every command reads an optional TOML [`RunConfig`], applies flag
//! overrides, derives all unset seeds from `--seed`, and writes a CSV
//! report plus a `.meta.toml` sidecar echoing the resolved config.
//!
//! Exit codes: 0 ok, 2 configuration, 3 oracle, 4 storage.

mod commands;
pub mod config;
mod report;
mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
use config::{BetaMode, EventSpec, SettleMode, SolverKind};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;
pub const EXIT_STORAGE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "srs", version, about = "Shapley royalty shares for generated content")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub solver: Option<SolverKind>,
    /// Monte-Carlo permutations.
    #[arg(long, global = true)]
    pub permutations: Option<usize>,
    /// `permission` or a fixed data share in [0, 1].
    #[arg(long, global = true)]
    pub beta: Option<BetaMode>,
    /// Report directory, relative to the working directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shapley values, LOO scores and royalty shares for one generated sample.
    Attribute(EventArgs),
    /// Developer share and owner payout fractions from the permission game.
    DeveloperShare(EventArgs),
    /// Pay out unsettled ledger transactions.
    Settle(SettleArgs),
    /// Shapley values beside leave-one-out scores.
    CompareLoo(EventArgs),
    /// Write a synthetic dataset, config and ledger into the output directory.
    Simulate,
}

#[derive(Debug, Args)]
pub struct EventArgs {
    /// Generated sample as comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub event: Option<Vec<f64>>,
    /// Conditioning label of the sample.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct SettleArgs {
    /// Ledger directory, relative to the working directory.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<SettleMode>,
    /// Transactions to sample; implies `--mode sample`.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Write the report without marking transactions settled.
    #[arg(long)]
    pub dry_run: bool,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::OracleFailure(_) | Error::NonFinite(_) => EXIT_ORACLE,
        Error::Storage(_) | Error::Io(_) | Error::DuplicateId(_) => EXIT_STORAGE,
        Error::IndexOutOfRange { .. }
        | Error::TooManyPlayers { .. }
        | Error::EmptyDataset
        | Error::DimensionMismatch { .. }
        | Error::Precondition(_)
        | Error::Config(_) => EXIT_CONFIG,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("srs: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> crate::Result<()> {
    let workers = cli.global.workers;
    if workers == Some(0) {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let ctx = commands::Context::new(&cli.global, &cli.command)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Attribute(_) => commands::attribute(&ctx),
        Command::DeveloperShare(_) => commands::developer_share(&ctx),
        Command::Settle(a) => commands::settle(&ctx, a.dry_run),
        Command::CompareLoo(_) => commands::compare_loo(&ctx),
        Command::Simulate => commands::simulate(&ctx),
    })
}

fn apply_overrides(cfg: &mut RunConfig, g: &GlobalArgs, cmd: &Command) {
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(k) = g.solver {
        cfg.solver.kind = k;
    }
    if let Some(m) = g.permutations {
        cfg.solver.permutations = m;
    }
    if let Some(b) = g.beta {
        cfg.beta = b;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    match cmd {
        Command::Attribute(e) | Command::DeveloperShare(e) | Command::CompareLoo(e) => {
            if let Some(x) = &e.event {
                cfg.event = Some(EventSpec { x: x.clone(), label: e.label.clone() });
            } else if let (Some(label), Some(ev)) = (&e.label, cfg.event.as_mut()) {
                ev.label = Some(label.clone());
            }
        }
        Command::Settle(s) => {
            if let Some(p) = &s.ledger {
                cfg.ledger.path = Some(p.clone());
            }
            if let Some(m) = s.mode {
                cfg.ledger.mode = m;
            }
            if let Some(k) = s.sample {
                cfg.ledger.sample_size = Some(k);
                if s.mode.is_none() {
                    cfg.ledger.mode = SettleMode::Sample;
                }
            }
        }
        Command::Simulate => {}
    }
}
