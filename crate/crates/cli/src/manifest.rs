//! Run manifests: a JSON record written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const TOOL: &str = "unetcd";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// The command's arguments with every default filled in.
    pub config: Value,
    /// Settings derived from the arguments (model and optimizer configs).
    #[serde(default)]
    pub resolved: Value,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seed: Option<u64>) -> CliResult<Self> {
        Ok(RunManifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: to_value(config)?,
            resolved: Value::Null,
            seed,
            deterministic: unet_cd::parallel::is_deterministic(),
            threads: rayon::current_num_threads(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.tool != TOOL {
            return Err(CliError::Validation(format!("{}: written by {:?}, not {TOOL}", path.display(), m.tool)));
        }
        Ok(m)
    }
}

/// Like `serde_json::to_value`, but single-precision floats keep their
/// shortest decimal form (0.0002, not 0.00019999999494757503).
pub fn to_value(value: &impl Serialize) -> CliResult<Value> {
    Ok(serde_json::from_str(&serde_json::to_string(value)?)?)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// `path` with its extension replaced by `ext`, e.g. `model.uncd` → `model.run.json`.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}
