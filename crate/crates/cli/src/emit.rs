//! Artifact writing. Every file carries the resolved config; CSV and text
//! files as leading `#` lines, JSON files as a `config` field.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub struct Emitter {
    dir: PathBuf,
    config: Value,
    generated: Option<String>,
    written: Vec<PathBuf>,
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("output: cannot write {}: {e}", path.display()))
}

impl Emitter {
    pub fn new(dir: &Path, config: &impl Serialize, timestamp: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config: serde_json::to_value(config).expect("config serializes"),
            generated: timestamp.then(|| chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string()),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn header(&self) -> String {
        let mut h = String::new();
        if let Some(g) = &self.generated {
            h.push_str(&format!("# generated: {g}\n"));
        }
        h.push_str(&format!("# config: {}\n", self.config));
        h
    }

    fn write(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| io_error(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// CSV or plain-text table, preceded by the header comment lines.
    pub fn table(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let text = format!("{}{body}", self.header());
        self.write(name, &text)
    }

    /// JSON object with `config` (and `generated_at`) merged in.
    pub fn json(&mut self, name: &str, value: Value) -> Result<(), CliError> {
        let mut obj = match value {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("data".into(), other);
                m
            }
        };
        obj.insert("config".into(), self.config.clone());
        if let Some(g) = &self.generated {
            obj.insert("generated_at".into(), Value::String(g.clone()));
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(obj)).expect("json serializes");
        text.push('\n');
        self.write(name, &text)
    }
}

/// Full-precision number for machine-readable tables.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// One-decimal percentage for human tables; never prints `-0.0`.
pub fn pct1(v: f64) -> String {
    let r = (v * 10.0).round() / 10.0;
    format!("{:.1}", if r == 0.0 { 0.0 } else { r })
}

/// Signed one-decimal change, `+26.4` / `-3.0` / `+0.0`.
pub fn signed1(v: f64) -> String {
    let r = (v * 10.0).round() / 10.0;
    format!("{:+.1}", if r == 0.0 { 0.0 } else { r })
}
