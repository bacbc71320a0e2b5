//! Config file loading and flag/file merging.

use std::path::Path;

use anyhow::{Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::UsageError;

/// Parsed config file as a JSON object. TOML files are converted; a JSON
/// report is accepted too, in which case its echoed `config` is used.
pub fn load(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        match v.get("schema_version").and(v.get("config")) {
            Some(c) => c.clone(),
            None => v,
        }
    } else {
        let t: toml::Table =
            toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t)?
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(UsageError(format!("{}: config must be a table", path.display())).into()),
    }
}

fn explicit(matches: &ArgMatches, id: &str) -> bool {
    matches.value_source(id) == Some(ValueSource::CommandLine)
}

/// Overlay `file` values onto `args` wherever the flag was not given on the
/// command line. Returns the merged arguments and their JSON echo.
pub fn merge<A: Serialize + DeserializeOwned>(
    args: &A,
    matches: &ArgMatches,
    file: Option<&Value>,
    section: &str,
) -> Result<(A, Value)> {
    let mut merged = match serde_json::to_value(args)? {
        Value::Object(m) => m,
        _ => unreachable!("argument structs serialize to objects"),
    };
    if let Some(file) = file {
        let table = file
            .as_object()
            .ok_or_else(|| UsageError(format!("config section [{section}] must be a table")))?;
        for (k, v) in table {
            if !merged.contains_key(k) {
                return Err(
                    UsageError(format!("unknown key {k:?} in config section [{section}]")).into(),
                );
            }
            if !explicit(matches, k) {
                merged.insert(k.clone(), v.clone());
            }
        }
    }
    let value = Value::Object(merged);
    let parsed = serde_json::from_value(value.clone())
        .map_err(|e| UsageError(format!("config section [{section}]: {e}")))
        .context("merging config")?;
    Ok((parsed, value))
}
