//! Command-line driver: synthetic data, training, segmentation, change
//! detection and evaluation.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;

use serde::de::DeserializeOwned;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;

/// Environment variable fixing the worker thread count.
pub const THREADS_ENV: &str = "UNETCD_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`], if set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

pub fn run(cli: &Cli) -> CliResult<RunManifest> {
    if cli.deterministic {
        unet_cd::parallel::set_deterministic(true);
    }
    execute(&cli.command)
}

pub fn execute(command: &Command) -> CliResult<RunManifest> {
    use commands::*;
    match command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Segment(a) => segment::run(a),
        Command::Detect(a) => detect::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Rerun(a) => rerun(&RunManifest::read(&a.manifest)?),
    }
}

fn config<T: DeserializeOwned>(m: &RunManifest) -> CliResult<T> {
    serde_json::from_value(m.config.clone())
        .map_err(|e| CliError::Validation(format!("{} manifest config: {e}", m.command)))
}

/// Runs the command a manifest records, with the same arguments and
/// threading mode.
pub fn rerun(m: &RunManifest) -> CliResult<RunManifest> {
    if m.deterministic {
        unet_cd::parallel::set_deterministic(true);
    }
    let command = match m.command.as_str() {
        "synth" => Command::Synth(config(m)?),
        "train" => Command::Train(config(m)?),
        "segment" => Command::Segment(config(m)?),
        "detect" => Command::Detect(config(m)?),
        "eval" => Command::Eval(config(m)?),
        "gradcheck" => Command::Gradcheck(config(m)?),
        other => return Err(CliError::Validation(format!("cannot rerun command {other:?}"))),
    };
    execute(&command)
}
