//! Serializable run reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: String,
    pub command: String,
    /// Full run configuration, flags and config file merged.
    pub config: serde_json::Value,
    pub seed: u64,
    pub scalars: BTreeMap<String, f64>,
    pub tables: BTreeMap<String, serde_json::Value>,
    /// Curve name to CSV file name, relative to the report.
    pub curves: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    /// Seconds since the Unix epoch; the only field that differs between
    /// identical runs.
    pub generated_at: Option<u64>,
}

impl EvaluationReport {
    pub fn new(command: impl Into<String>, config: serde_json::Value, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            command: command.into(),
            config,
            seed,
            scalars: BTreeMap::new(),
            tables: BTreeMap::new(),
            curves: BTreeMap::new(),
            warnings: Vec::new(),
            generated_at: None,
        }
    }

    /// Non-finite values are not representable in JSON and become warnings.
    pub fn scalar(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        if value.is_finite() {
            self.scalars.insert(name, value);
        } else {
            self.warnings
                .push(format!("{name} is not finite ({value})"));
        }
    }

    pub fn scalar_opt(&mut self, name: impl Into<String>, value: Option<f64>) {
        let name = name.into();
        match value {
            Some(v) => self.scalar(name, v),
            None => self.warnings.push(format!("{name} is undefined")),
        }
    }

    pub fn table(&mut self, name: impl Into<String>, value: &impl Serialize) -> Result<()> {
        self.tables
            .insert(name.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn curve(&mut self, name: impl Into<String>, file: impl Into<String>) {
        self.curves.insert(name.into(), file.into());
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn stamp(&mut self) {
        self.generated_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
    }

    /// Copy without the timestamp, for reproducibility comparisons.
    pub fn without_timestamp(&self) -> Self {
        Self {
            generated_at: None,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema_version.split('.').next() != SCHEMA_VERSION.split('.').next() {
            return Err(AuditError::Schema(format!(
                "report schema {} is incompatible with {SCHEMA_VERSION}",
                r.schema_version
            )));
        }
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|source| AuditError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AuditError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Combine reports; every key is prefixed with its source command (and an
/// index when a command repeats).
pub fn merge(reports: &[EvaluationReport]) -> Result<EvaluationReport> {
    let first = reports
        .first()
        .ok_or_else(|| AuditError::invalid("no reports to merge"))?;
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out = EvaluationReport::new("merge", serde_json::Value::Null, first.seed);
    let mut configs = serde_json::Map::new();
    for r in reports {
        let count = seen.entry(r.command.as_str()).or_insert(0);
        let prefix = if *count == 0 {
            r.command.clone()
        } else {
            format!("{}#{count}", r.command)
        };
        *count += 1;
        if r.seed != first.seed {
            out.warn(format!(
                "{prefix}: seed {} differs from {}",
                r.seed, first.seed
            ));
        }
        configs.insert(prefix.clone(), r.config.clone());
        for (k, v) in &r.scalars {
            out.scalars.insert(format!("{prefix}/{k}"), *v);
        }
        for (k, v) in &r.tables {
            out.tables.insert(format!("{prefix}/{k}"), v.clone());
        }
        for (k, v) in &r.curves {
            out.curves.insert(format!("{prefix}/{k}"), v.clone());
        }
        out.warnings
            .extend(r.warnings.iter().map(|w| format!("{prefix}: {w}")));
    }
    out.config = serde_json::Value::Object(configs);
    Ok(out)
}
