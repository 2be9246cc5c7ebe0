//! Flat `key = value` scenario files.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma
//! separated and may be wrapped in brackets. Unknown or repeated keys are
//! errors.

use std::collections::BTreeMap;
use std::fmt;

/// Every key a scenario file may set.
pub const KEYS: &[&str] = &[
    "model",
    "drift",
    "drift.c",
    "spectrum",
    "spectrum.dim",
    "spectrum.q",
    "operator",
    "operator.epsilon",
    "initial",
    "initial.point",
    "initial.mean",
    "initial.var",
    "initial.center",
    "initial.radius",
    "initial.delta",
    "target.center",
    "target.radius",
    "T",
    "h",
    "N",
    "seed",
    "probes",
    "M",
    "tau.variant",
    "oracle.cells",
    "oracle.dt",
    "record.stride",
    "test_function",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line, when the problem is tied to one.
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn at(line: usize, key: &str, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            key: Some(key.to_string()),
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self {
            line: None,
            key: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "key '{key}': ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// A parsed scenario file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioFile {
    entries: BTreeMap<String, Entry>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, Vec<ConfigError>> {
        let mut entries = BTreeMap::new();
        let mut errors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                errors.push(ConfigError {
                    line: Some(line),
                    key: None,
                    message: format!("expected 'key = value', got '{content}'"),
                });
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                errors.push(ConfigError::at(line, key, "unknown key"));
                continue;
            }
            if value.is_empty() {
                errors.push(ConfigError::at(line, key, "missing value"));
                continue;
            }
            if let Some(prev) = entries.get(key) {
                let prev: &Entry = prev;
                errors.push(ConfigError::at(line, key, format!("already set on line {}", prev.line)));
                continue;
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line,
                },
            );
        }
        if errors.is_empty() {
            Ok(Self { entries })
        } else {
            Err(errors)
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    /// Error located at `key`'s line.
    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.line(key),
            key: Some(key.to_string()),
            message: message.into(),
        }
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn real(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_real(v).map_err(|m| self.error(key, m)),
        }
    }

    pub fn opt_real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.raw(key)
            .map(|v| parse_real(v).map_err(|m| self.error(key, m)))
            .transpose()
    }

    pub fn count(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| self.error(key, format!("expected a nonnegative integer, got '{v}'"))),
        }
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.raw(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| self.error(key, format!("expected an unsigned 64-bit integer, got '{v}'")))
            })
            .transpose()
    }

    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.raw(key)
            .map(|v| parse_list(v).map_err(|m| self.error(key, m)))
            .transpose()
    }

    /// The file's entries in key order, for echoing into reports.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect()
    }
}

fn parse_real(v: &str) -> Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("expected a finite number, got '{v}'")),
    }
}

pub fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    let inner = v.trim();
    let inner = inner
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(inner);
    if inner.trim().is_empty() {
        return Err("empty list".into());
    }
    inner.split(',').map(|x| parse_real(x.trim())).collect()
}
