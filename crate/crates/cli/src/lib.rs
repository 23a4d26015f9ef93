//! Command-line front end for `convspectra`.
//!
//! ```text
//! convspectra <command> [key=value | --key value | --config FILE]...
//! convspectra run FILE [key=value | --key value]...
//! ```
//!
//! Later settings override earlier ones, so command-line pairs override a
//! config file given before them.

pub mod commands;
pub mod config;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use convspectra::kernel::split_pairs;
use convspectra::Error;

pub use config::{parse_config, Command, KernelKind, LearningRate, RunConfig, COMMANDS};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => e.exit_code(),
            CliError::Validation(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "numeric",
            _ => "validation",
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Validation(m) => f.write_str(m),
        }
    }
}

pub const USAGE: &str = "usage: convspectra <command> [key=value | --key value | --config FILE]...
       convspectra run FILE [key=value | --key value]...
commands: kernel-eval, series, spectrum, slope, paths, profile, train, validate
arch keys: family=gpk|ntk head=eqnet|trace|gap L q d zeta first_layer=one_by_one|conv_q
spectrum kernel=fc swaps in the fully connected kernel of depth L
exit codes: 0 ok, 2 config error, 3 numeric or resource error, 4 validation failure
env: NTHREADS caps the worker threads";

/// Input paths (`patterns`, `in`) inside a config file are relative to the file's directory.
fn read_config_file(path: &str) -> Result<Vec<(String, String)>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        key: "config".into(),
        message: format!("cannot read `{path}`: {e}"),
    })?;
    let dir = Path::new(path).parent().unwrap_or(Path::new(""));
    let mut pairs = split_pairs(&text)?;
    for (k, v) in &mut pairs {
        if (k == "patterns" || k == "in") && Path::new(v.as_str()).is_relative() {
            *v = dir.join(v.as_str()).display().to_string();
        }
    }
    Ok(pairs)
}

/// Turns command-line arguments into ordered `(key, value)` pairs.
pub fn args_to_pairs(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut pairs = Vec::new();
    let mut rest = args;
    match args.first().map(String::as_str) {
        Some("run") => {
            let file = args.get(1).ok_or_else(|| Error::Config {
                key: "config".into(),
                message: "`run` needs a config file".into(),
            })?;
            pairs.extend(read_config_file(file)?);
            rest = &args[2..];
        }
        Some(cmd) => {
            pairs.push(("command".to_string(), cmd.to_string()));
            rest = &args[1..];
        }
        None => {}
    }
    let mut i = 0;
    while i < rest.len() {
        let arg = &rest[i];
        if let Some(flag) = arg.strip_prefix("--") {
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = rest.get(i + 1).ok_or_else(|| Error::Config {
                        key: flag.replace('-', "_"),
                        message: "flag needs a value".into(),
                    })?;
                    i += 1;
                    (flag.to_string(), v.clone())
                }
            };
            let key = key.replace('-', "_");
            if key == "config" {
                pairs.extend(read_config_file(&value)?);
            } else {
                pairs.push((key, value));
            }
        } else if let Some((k, v)) = arg.split_once('=') {
            pairs.push((k.to_string(), v.to_string()));
        } else {
            return Err(Error::Config {
                key: arg.clone(),
                message: "expected key=value or --key value".into(),
            });
        }
        i += 1;
    }
    Ok(pairs)
}

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("NTHREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| Error::Config {
            key: "NTHREADS".into(),
            message: format!("must be a positive integer, got `{v}`"),
        })?;
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run_args(args: &[String], stdout: &mut dyn Write) -> Result<(), CliError> {
    init_threads()?;
    let cfg = RunConfig::from_pairs(&args_to_pairs(args)?)?;
    commands::run(&cfg, stdout)
}

/// Runs the CLI and returns the process exit code. Failures print one
/// `error: code=<n> kind=<kind>: <message>` line to `stderr`.
pub fn main_with_args(args: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match args.first().map(String::as_str) {
        None => {
            let _ = writeln!(stderr, "{USAGE}");
            return 2;
        }
        Some("-h" | "--help" | "help") => {
            let _ = writeln!(stdout, "{USAGE}");
            return 0;
        }
        _ => {}
    }
    match run_args(args, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let _ = writeln!(stderr, "error: code={code} kind={}: {e}", e.kind());
            code
        }
    }
}
