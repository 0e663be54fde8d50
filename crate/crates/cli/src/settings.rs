//! Command-line parsing with an optional key=value settings file.
//!
//! File entries are turned into flags placed before the ones typed by the
//! user; since every option overrides itself, the command line wins.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use depref::error::Error;

use crate::{Cli, Command};

/// Why a command did not finish.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, settings or inputs; exit code 2.
    Usage(String),
    /// Failure while doing the work; exit code 1.
    Runtime(anyhow::Error),
    Clap(clap::Error),
}

impl Failure {
    pub fn report(self) -> ExitCode {
        match self {
            Failure::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            Failure::Runtime(err) => {
                eprintln!("error: {err:#}");
                ExitCode::from(1)
            }
            Failure::Clap(err) => {
                let _ = err.print();
                ExitCode::from(err.exit_code().clamp(0, 255) as u8)
            }
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Alignment(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;

/// A required setting.
pub fn required<T>(value: Option<T>, flag: &str) -> Outcome<T> {
    value.ok_or_else(|| Failure::Usage(format!("--{flag} is required (on the command line or in the settings file)")))
}

/// A path that must exist before any work starts.
pub fn existing(path: Option<PathBuf>, flag: &str) -> Outcome<PathBuf> {
    let path = required(path, flag)?;
    check_exists(&path, flag)?;
    Ok(path)
}

pub fn check_exists(path: &Path, flag: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("--{flag}: {} does not exist", path.display())))
    }
}

fn config_path(command: &Command) -> Option<&Path> {
    let common = match command {
        Command::Train(a) => &a.common,
        Command::Parse(a) => &a.common,
        Command::Refine(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Analyze(a) => &a.common,
        Command::Gradcheck(a) => &a.common,
        Command::GenToy(a) => &a.common,
    };
    common.config.as_deref()
}

/// `key=value` lines; blank lines and `#` comments are ignored.
pub fn read_settings(path: &Path) -> Outcome<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("--config: cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        out.push((i + 1, k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_cli(args: Vec<OsString>) -> Outcome<Cli> {
    let cli = Cli::try_parse_from(&args).map_err(Failure::Clap)?;
    let Some(path) = config_path(&cli.command).map(Path::to_path_buf) else {
        return Ok(cli);
    };
    let entries = read_settings(&path)?;
    let root = Cli::command();
    let (at, sub) = args
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| root.find_subcommand(a).map(|s| (i, s)))
        .expect("a parsed command line names its subcommand");

    let mut injected: Vec<OsString> = Vec::new();
    for (line, key, value) in entries {
        let unknown = || Failure::Usage(format!("{}:{line}: unknown setting {key:?} for {}", path.display(), sub.get_name()));
        if key == "config" {
            return Err(unknown());
        }
        let arg = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())).ok_or_else(unknown)?;
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else {
            let on: bool = value
                .parse()
                .map_err(|_| Failure::Usage(format!("{}:{line}: {key} expects true or false", path.display())))?;
            if on {
                injected.push(format!("--{key}").into());
            }
        }
    }
    let mut merged = args[..=at].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[at + 1..]);
    Cli::try_parse_from(merged).map_err(Failure::Clap)
}
