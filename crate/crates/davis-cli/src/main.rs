//! Command-line laboratory for marginal-utility price intervals: finite
//! markets from files or truncated countable families, a truncation sweep,
//! and Monte-Carlo deflator experiments, all emitting a reproducible JSON
//! summary plus plot-ready CSV tables.
//!
//! Exit codes: 0 success, 1 failed reproduction assertion, 2 model error
//! (arbitrage, invalid endowment), 3 numeric failure, 4 configuration
//! error.

mod config;
mod emit;
mod pipelines;
mod reproduce;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use davis_core::{Error, Result};

use config::{load_config_file, merge, resolve, CommandName, ExperimentConfig, UtilityName};

#[derive(Parser, Debug)]
#[command(
    name = "davis-lab",
    version,
    about = "Price intervals for contingent claims under random endowments"
)]
struct Cli {
    /// JSON experiment file; explicit flags override its fields. A summary
    /// from an earlier run re-executes the configuration embedded in it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Maximize expected utility of terminal wealth; report the optimum.
    Solve,
    /// Solve the dual problem; report density, mass and the duality gap.
    Dual,
    /// Superreplicate the market's claim; certify how unique the cheapest
    /// strategies are.
    Superrep,
    /// Price the market's claim by three independent routes.
    Davis,
    /// Sweep a countable family's truncations: dual mass, pairing and
    /// one-sided value slopes per level.
    Sweep,
    /// Monte-Carlo deflator run: stopped singular drift against a constant
    /// control, checkpoint means, tanh-claim interval.
    Mc,
    /// Suboptimality ladder of the first-order corrected policy.
    Corrector,
    /// Re-run a canned experiment; assert and print its expected outcome.
    Reproduce(reproduce::ReproduceArgs),
}

#[derive(clap::Args, Debug)]
struct Flags {
    /// Market file (JSON with probs, dS, endowment and an optional claim).
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "family")]
    market: Option<PathBuf>,
    /// Registered countable market family (known: csw).
    #[arg(long, global = true, value_name = "NAME")]
    family: Option<String>,
    /// Utility on terminal wealth [default: log].
    #[arg(long, global = true, value_enum, value_name = "NAME")]
    utility: Option<UtilityName>,
    /// Exponent of the power utility (requires --utility power).
    #[arg(long, global = true, value_name = "REAL", allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Truncation levels: sweep visits all of them; other commands
    /// truncate a family at the first [default: 200,500,1000 / 200].
    #[arg(long, global = true, value_name = "CSV-INTS", value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    /// Monte-Carlo path count [default: 100000].
    #[arg(long, global = true, value_name = "INT")]
    paths: Option<usize>,
    /// Seed of the Monte-Carlo driver [default: 7].
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Perturbation sizes of the corrected-policy ladder
    /// [default: 0.1,0.05,0.025].
    #[arg(long, global = true, value_name = "CSV-REALS", value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Write the JSON summary here (tables land beside it as .csv)
    /// instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Tolerance override: optimizer position tolerance, or the
    /// superreplication feasibility slack [default: 1e-12 / 1e-9].
    #[arg(long, global = true, value_name = "REAL")]
    tol: Option<f64>,
}

impl Flags {
    fn into_config(self, cmd: Option<CommandName>) -> ExperimentConfig {
        ExperimentConfig {
            command: cmd,
            market: self.market,
            family: self.family,
            utility: self.utility,
            gamma: self.gamma,
            levels: self.levels,
            paths: self.paths,
            seed: self.seed,
            eps: self.eps,
            out: self.out,
            tol: self.tol,
        }
    }

    /// First experiment flag that is set, ignoring --out.
    fn stray_for_reproduce(&self) -> Option<&'static str> {
        [
            (self.market.is_some(), "market"),
            (self.family.is_some(), "family"),
            (self.utility.is_some(), "utility"),
            (self.gamma.is_some(), "gamma"),
            (self.levels.is_some(), "levels"),
            (self.paths.is_some(), "paths"),
            (self.seed.is_some(), "seed"),
            (self.eps.is_some(), "eps"),
            (self.tol.is_some(), "tol"),
        ]
        .into_iter()
        .find_map(|(set, name)| set.then_some(name))
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidModel(_) => 2,
        Error::Numeric(_) | Error::Search(_) => 3,
        Error::InvalidArgument(_) | Error::Unsupported(_) => 4,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let cmd = match cli.command {
        Some(Cmd::Reproduce(args)) => {
            if cli.config.is_some() {
                return Err(Error::InvalidArgument(
                    "reproduce runs a canned configuration; --config does not apply".into(),
                ));
            }
            if let Some(flag) = cli.flags.stray_for_reproduce() {
                return Err(Error::InvalidArgument(format!(
                    "--{flag} does not apply to reproduce"
                )));
            }
            return reproduce::run(args.example, cli.flags.out.as_deref());
        }
        Some(Cmd::Solve) => Some(CommandName::Solve),
        Some(Cmd::Dual) => Some(CommandName::Dual),
        Some(Cmd::Superrep) => Some(CommandName::Superrep),
        Some(Cmd::Davis) => Some(CommandName::Davis),
        Some(Cmd::Sweep) => Some(CommandName::Sweep),
        Some(Cmd::Mc) => Some(CommandName::Mc),
        Some(Cmd::Corrector) => Some(CommandName::Corrector),
        None => None,
    };
    let file = match &cli.config {
        Some(path) => load_config_file(path)?,
        None => ExperimentConfig::default(),
    };
    let resolved = resolve(merge(cli.flags.into_config(cmd), file))?;
    pipelines::execute(&resolved)?;
    Ok(0)
}
