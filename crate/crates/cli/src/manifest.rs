use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::CliError;

/// What produced an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Left out of embedded copies so that reruns are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    /// The fully resolved input.
    pub config: Value,
}

impl RunManifest {
    pub fn new<C: Serialize>(subcommand: &str, seed: Option<u64>, config: &C) -> Result<Self, CliError> {
        let config = Value::try_from(config).map_err(|e| CliError::Config(format!("cannot echo config: {e}")))?;
        Ok(RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            timestamp: None,
            config,
        })
    }

    pub fn stamped(&self) -> Self {
        RunManifest { timestamp: Some(chrono::Utc::now().to_rfc3339()), ..self.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always representable in TOML")
    }

    /// The manifest as `# ` comment lines, for embedding ahead of a CSV
    /// header.
    pub fn comment_block(&self) -> String {
        self.to_toml()
            .lines()
            .map(|l| if l.is_empty() { "#\n".to_string() } else { format!("# {l}\n") })
            .collect()
    }

    /// Reads back a manifest embedded with [`RunManifest::comment_block`].
    #[cfg(test)]
    pub fn from_comment_block(text: &str) -> Result<Self, CliError> {
        let body: String = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| format!("{}\n", l.strip_prefix("# ").unwrap_or(l.trim_start_matches('#'))))
            .collect();
        toml::from_str(&body).map_err(|e| CliError::Config(format!("bad manifest: {e}")))
    }
}
