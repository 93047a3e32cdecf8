//! TOML input files.
//!
//! Reals may be written as `sqrt:x` or `log:x` so that weights like √0.5
//! and margins like log 1.25 need not be truncated to decimals.

use std::path::Path;

use abe_core::sim::ScenarioConfig;
use abe_core::ssr::SsrConfig;
use abe_core::tost::DesignSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

/// Parses a real literal: a plain number, `sqrt:x` or `log:x`.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (f, body): (fn(f64) -> f64, &str) = if let Some(b) = s.strip_prefix("sqrt:") {
        (f64::sqrt, b)
    } else if let Some(b) = s.strip_prefix("log:") {
        (f64::ln, b)
    } else {
        (|x| x, s)
    };
    let x: f64 = body.trim().parse().map_err(|_| format!("`{s}` is not a real number"))?;
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` does not evaluate to a finite number"))
    }
}

/// Allowed keys of one table.
pub enum Node {
    Leaf,
    Table(&'static [(&'static str, Node)]),
    /// Array of tables, each following the inner schema.
    Tables(&'static [(&'static str, Node)]),
}

const DESIGN: &[(&str, Node)] = &[
    ("delta", Node::Leaf),
    ("alpha", Node::Leaf),
    ("alpha1", Node::Leaf),
    ("alpha0", Node::Leaf),
    ("w", Node::Leaf),
    ("w_star", Node::Leaf),
    ("use_t", Node::Leaf),
    ("df_rule", Node::Leaf),
];

const SSR: &[(&str, Node)] = &[
    ("target_power", Node::Leaf),
    ("gamma_target", Node::Leaf),
    ("n2_max", Node::Leaf),
    ("n2_min", Node::Leaf),
    ("inner_sims", Node::Leaf),
    ("theta_override", Node::Leaf),
    ("sigma_override", Node::Leaf),
];

const STAGE: &[(&str, Node)] = &[
    ("theta_hat", Node::Leaf),
    ("sigma_hat", Node::Leaf),
    ("n", Node::Leaf),
    ("correlation", Node::Leaf),
];

const SCENARIO: &[(&str, Node)] = &[
    ("name", Node::Leaf),
    ("theta", Node::Leaf),
    ("sigma", Node::Leaf),
    ("endpoint_correlation", Node::Leaf),
    ("n1", Node::Leaf),
    ("replications", Node::Leaf),
    ("seed", Node::Leaf),
    ("comparator", Node::Leaf),
    ("design", Node::Table(DESIGN)),
    ("ssr", Node::Table(SSR)),
];

pub const SIMULATE: &[(&str, Node)] = &[("seed", Node::Leaf), ("scenario", Node::Tables(SCENARIO))];

pub const TRIAL: &[(&str, Node)] = &[
    ("design", Node::Table(DESIGN)),
    ("stage1", Node::Table(STAGE)),
    ("stage2", Node::Table(STAGE)),
];

pub const INTERIM: &[(&str, Node)] = &[
    ("design", Node::Table(DESIGN)),
    ("ssr", Node::Table(SSR)),
    ("interim", Node::Table(STAGE)),
];

pub const CALIBRATE: &[(&str, Node)] = &[
    ("alpha", Node::Leaf),
    ("alpha0", Node::Leaf),
    ("w", Node::Leaf),
    ("w_star", Node::Leaf),
    ("delta_over_sigma", Node::Leaf),
];

/// Dotted paths of every key of `table` that `schema` does not know.
pub fn unknown_keys(table: &Table, schema: &[(&str, Node)]) -> Vec<String> {
    let mut out = Vec::new();
    walk(table, schema, "", &mut out);
    out
}

fn walk(table: &Table, schema: &[(&str, Node)], prefix: &str, out: &mut Vec<String>) {
    for (key, value) in table {
        let path = format!("{prefix}{key}");
        match (schema.iter().find(|(k, _)| k == key).map(|(_, n)| n), value) {
            (None, _) => out.push(path),
            (Some(Node::Table(inner)), Value::Table(t)) => walk(t, inner, &format!("{path}."), out),
            (Some(Node::Tables(inner)), Value::Array(items)) => {
                for (i, item) in items.iter().enumerate() {
                    if let Value::Table(t) = item {
                        walk(t, inner, &format!("{path}[{i}]."), out);
                    }
                }
            }
            _ => {}
        }
    }
}

/// Replaces `sqrt:`/`log:` strings by their values. Other strings are left
/// for the typed parse to judge.
pub fn resolve_reals(value: &mut Value, path: &str) -> Result<(), CliError> {
    match value {
        Value::String(s) if s.starts_with("sqrt:") || s.starts_with("log:") => {
            let v = parse_real(s).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            *value = Value::Float(v);
        }
        Value::Table(t) => {
            for (k, v) in t.iter_mut() {
                resolve_reals(v, &join(path, k))?;
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter_mut().enumerate() {
                resolve_reals(v, &format!("{path}[{i}]"))?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Parses TOML text, rejects unknown keys and resolves real literals.
pub fn parse_table(text: &str, schema: &[(&str, Node)]) -> Result<Table, CliError> {
    let table: Table = text.parse().map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
    let unknown = unknown_keys(&table, schema);
    if !unknown.is_empty() {
        return Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    let mut value = Value::Table(table);
    resolve_reals(&mut value, "")?;
    match value {
        Value::Table(t) => Ok(t),
        _ => unreachable!(),
    }
}

pub fn read_table(path: &Path, schema: &[(&str, Node)]) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_table(&text, schema)
}

/// Deserializes a resolved table into `T`.
pub fn typed<T: DeserializeOwned>(table: Table) -> Result<T, CliError> {
    Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))
}

/// One or two endpoint values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerEndpoint {
    One(f64),
    Two([f64; 2]),
}

/// Summary statistics of one stage as written in a config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageInput {
    pub theta_hat: PerEndpoint,
    /// Pooled within-arm standard deviation per endpoint.
    pub sigma_hat: PerEndpoint,
    /// Subjects per arm.
    pub n: u32,
    /// Correlation of the two endpoints, used by two-endpoint SSR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
}

/// Input of `decide` and `ci`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialInput {
    pub design: DesignSpec,
    pub stage1: StageInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2: Option<StageInput>,
}

/// Input of `ssr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterimInput {
    pub design: DesignSpec,
    #[serde(default)]
    pub ssr: SsrConfig,
    pub interim: StageInput,
}

/// Input of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub scenario: Vec<ScenarioConfig>,
}

/// Input of `calibrate`; every field may also come from the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrateInput {
    pub alpha: Option<f64>,
    pub alpha0: Option<f64>,
    pub w: Option<f64>,
    pub w_star: Option<f64>,
    pub delta_over_sigma: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_literals() {
        assert_eq!(parse_real("0.5").unwrap(), 0.5);
        assert_eq!(parse_real("sqrt:0.5").unwrap(), 0.5f64.sqrt());
        assert_eq!(parse_real("log:1.25").unwrap(), 1.25f64.ln());
        assert!(parse_real("sqrt:-1").is_err());
        assert!(parse_real("cbrt:8").is_err());
        assert!(parse_real("log:0").is_err());
    }

    #[test]
    fn lists_every_unknown_key() {
        let text = r#"
            seed = 1
            colour = "red"
            [[scenario]]
            theta = 0.0
            thetta = 1.0
            [scenario.design]
            delta = "log:1.25"
            alpah = 0.05
        "#;
        let t: Table = text.parse().unwrap();
        let mut got = unknown_keys(&t, SIMULATE);
        got.sort();
        assert_eq!(got, ["colour", "scenario[0].design.alpah", "scenario[0].thetta"]);
    }

    #[test]
    fn resolves_nested_literals() {
        let text = r#"
            [design]
            delta = "log:1.25"
            w = "sqrt:0.5"
            [stage1]
            theta_hat = ["log:0.95", 0.1]
            sigma_hat = 0.3
            n = 40
        "#;
        let t = parse_table(text, TRIAL).unwrap();
        assert_eq!(t["design"]["delta"].as_float(), Some(1.25f64.ln()));
        assert_eq!(t["stage1"]["theta_hat"][0].as_float(), Some(0.95f64.ln()));
        assert!(parse_table("[design]\nw = \"sqrt:x\"", TRIAL).is_err());
    }
}
