//! Output files. Each one embeds the resolved configuration: JSON files as a
//! `provenance` object, CSV files as leading `#` comment lines.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

/// A JSON output: provenance plus the result object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope<T> {
    pub provenance: Provenance,
    pub result: T,
}

pub fn json<T: Serialize>(provenance: &Provenance, result: &T) -> Result<String> {
    serde_json::to_string_pretty(&Envelope {
        provenance: provenance.clone(),
        result,
    })
    .map_err(|e| CliError::Usage(format!("json: {e}")))
}

/// `body` preceded by the provenance as `#` comments.
pub fn commented_csv(provenance: &Provenance, body: &str) -> Result<String> {
    let mut out = format!(
        "# feedrisk {} {}\n# seed = {}\n",
        provenance.command, provenance.version, provenance.seed
    );
    for line in provenance.config.to_toml()?.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(body);
    Ok(out)
}

/// Recovers the configuration echoed at the top of a CSV output.
pub fn echoed_config(csv: &str) -> Result<RunConfig> {
    let toml: String = csv
        .lines()
        .take_while(|l| l.starts_with('#'))
        .skip(2)
        .map(|l| l.strip_prefix("# ").or_else(|| l.strip_prefix('#')).unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n");
    RunConfig::from_toml(&toml)
}

/// The CSV part of a commented output.
pub fn csv_body(csv: &str) -> String {
    csv.lines()
        .skip_while(|l| l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
