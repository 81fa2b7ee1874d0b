//! Experiment configuration: the shared flag set, its JSON file form, and
//! the merge of the two into one fully resolved, validated record that the
//! pipelines consume and every summary embeds.

use std::fs;
use std::path::{Path, PathBuf};

use davis_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Pipeline selector. Subcommands map onto this one-to-one so that a
/// configuration file can name the command it wants to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandName {
    Solve,
    Dual,
    Superrep,
    Davis,
    Sweep,
    Mc,
    Corrector,
}

impl CommandName {
    pub fn name(self) -> &'static str {
        match self {
            CommandName::Solve => "solve",
            CommandName::Dual => "dual",
            CommandName::Superrep => "superrep",
            CommandName::Davis => "davis",
            CommandName::Sweep => "sweep",
            CommandName::Mc => "mc",
            CommandName::Corrector => "corrector",
        }
    }
}

/// Utility family named on the command line or in a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum UtilityName {
    Log,
    Power,
}

/// One experiment: the command plus every input it may consume. Unset
/// fields fall back to per-command defaults during [`resolve`]; fields a
/// command cannot consume are rejected rather than silently ignored.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandName>,
    /// Market file (JSON with probs, dS, endowment and an optional claim).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market: Option<PathBuf>,
    /// Registered countable family, truncated before use.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

/// Reads a configuration file. A summary written by an earlier run is
/// accepted too: its embedded "config" object is extracted, so feeding a
/// summary back in reproduces the run that made it.
pub fn load_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
    let body = match value.get("config") {
        Some(embedded) if embedded.is_object() => embedded.clone(),
        _ => value,
    };
    serde_json::from_value(body)
        .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
}

/// Overlays explicit flags on a configuration file. Flags win field by
/// field; two field pairs travel together so a stale half of an overridden
/// pair cannot leak through: naming a model source (market or family)
/// supersedes both file fields, and naming a utility drops the file's
/// gamma unless the chosen utility still wants one.
pub fn merge(flags: ExperimentConfig, file: ExperimentConfig) -> ExperimentConfig {
    let (market, family) = if flags.market.is_some() || flags.family.is_some() {
        (flags.market, flags.family)
    } else {
        (file.market, file.family)
    };
    let (utility, gamma) = match flags.utility {
        Some(UtilityName::Power) => (Some(UtilityName::Power), flags.gamma.or(file.gamma)),
        Some(UtilityName::Log) => (Some(UtilityName::Log), flags.gamma),
        None => (file.utility, flags.gamma.or(file.gamma)),
    };
    ExperimentConfig {
        command: flags.command.or(file.command),
        market,
        family,
        utility,
        gamma,
        levels: flags.levels.or(file.levels),
        paths: flags.paths.or(file.paths),
        seed: flags.seed.or(file.seed),
        eps: flags.eps.or(file.eps),
        out: flags.out.or(file.out),
        tol: flags.tol.or(file.tol),
    }
}

/// Which optional inputs a command consumes.
struct Consumes {
    market: bool,
    family: bool,
    utility: bool,
    levels: bool,
    paths: bool,
    seed: bool,
    eps: bool,
    tol: bool,
}

fn consumes(cmd: CommandName) -> Consumes {
    let none = Consumes {
        market: false,
        family: false,
        utility: false,
        levels: false,
        paths: false,
        seed: false,
        eps: false,
        tol: false,
    };
    match cmd {
        CommandName::Solve | CommandName::Dual => {
            Consumes { market: true, family: true, utility: true, levels: true, tol: true, ..none }
        }
        CommandName::Superrep => {
            Consumes { market: true, family: true, levels: true, tol: true, ..none }
        }
        CommandName::Davis => {
            Consumes { market: true, family: true, utility: true, levels: true, ..none }
        }
        CommandName::Sweep => Consumes { family: true, levels: true, ..none },
        CommandName::Mc => Consumes { paths: true, seed: true, ..none },
        CommandName::Corrector => {
            Consumes { utility: true, paths: true, seed: true, eps: true, ..none }
        }
    }
}

fn reject_unconsumed(cmd: CommandName, c: &ExperimentConfig, allow: &Consumes) -> Result<()> {
    let checks = [
        (c.market.is_some(), allow.market, "market"),
        (c.family.is_some(), allow.family, "family"),
        (c.utility.is_some(), allow.utility, "utility"),
        (c.gamma.is_some(), allow.utility, "gamma"),
        (c.levels.is_some(), allow.levels, "levels"),
        (c.paths.is_some(), allow.paths, "paths"),
        (c.seed.is_some(), allow.seed, "seed"),
        (c.eps.is_some(), allow.eps, "eps"),
        (c.tol.is_some(), allow.tol, "tol"),
    ];
    for (set, ok, name) in checks {
        if set && !ok {
            return Err(Error::InvalidArgument(format!(
                "--{name} does not apply to the {} command",
                cmd.name()
            )));
        }
    }
    Ok(())
}

/// Fills per-command defaults and validates the merged record. The result
/// names its command and carries every field that command consumes; it is
/// what each summary embeds for reproducibility.
pub fn resolve(merged: ExperimentConfig) -> Result<ExperimentConfig> {
    let Some(cmd) = merged.command else {
        return Err(Error::InvalidArgument(
            "no command: pass a subcommand or a configuration file with a \"command\" field".into(),
        ));
    };
    let allow = consumes(cmd);
    reject_unconsumed(cmd, &merged, &allow)?;

    let mut c = merged;
    if allow.market {
        if c.market.is_some() && c.family.is_some() {
            return Err(Error::InvalidArgument(
                "pass either --market or --family, not both".into(),
            ));
        }
        if c.market.is_none() && c.family.is_none() {
            return Err(Error::InvalidArgument(format!(
                "the {} command needs --market or --family",
                cmd.name()
            )));
        }
        if c.market.is_some() && c.levels.is_some() {
            return Err(Error::InvalidArgument(
                "--levels truncates a family; it does not apply to a market file".into(),
            ));
        }
        if c.family.is_some() && c.levels.is_none() {
            c.levels = Some(vec![200]);
        }
    }
    if cmd == CommandName::Sweep {
        c.family.get_or_insert_with(|| "csw".into());
        c.levels.get_or_insert_with(|| vec![200, 500, 1000]);
    }
    if allow.utility {
        match *c.utility.get_or_insert(UtilityName::Log) {
            UtilityName::Power if c.gamma.is_none() => {
                return Err(Error::InvalidArgument("the power utility needs --gamma".into()));
            }
            UtilityName::Log if c.gamma.is_some() => {
                return Err(Error::InvalidArgument(
                    "--gamma applies to the power utility only".into(),
                ));
            }
            _ => {}
        }
    }
    if allow.paths {
        c.paths.get_or_insert(100_000);
        c.seed.get_or_insert(7);
    }
    if allow.eps {
        c.eps.get_or_insert_with(|| vec![0.1, 0.05, 0.025]);
    }
    if allow.tol {
        let fallback = if cmd == CommandName::Superrep { 1e-9 } else { 1e-12 };
        let t = *c.tol.get_or_insert(fallback);
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive and finite, got {t}"
            )));
        }
    }
    if c.levels.as_ref().is_some_and(|l| l.is_empty()) {
        return Err(Error::InvalidArgument("levels must not be empty".into()));
    }
    if c.eps.as_ref().is_some_and(|e| e.is_empty()) {
        return Err(Error::InvalidArgument("eps must not be empty".into()));
    }
    Ok(c)
}
