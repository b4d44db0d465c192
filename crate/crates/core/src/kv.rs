//! Flat `key = value` text files, used for session metadata, calibration
//! files, the simulator's ground-truth sidecar, and CLI config overrides.
//!
//! Grammar: one `key = value` pair per line, `#` starts a comment, blank
//! lines are ignored. Keys are dotted lowercase identifiers. Duplicate keys
//! keep the last value.

use std::fmt::Display;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

/// An ordered list of key/value pairs; order is preserved on write so output
/// files are byte-stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn new() -> Self {
        KvFile::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let content = content.trim();
            if content.is_empty() {
                continue;
            }
            let Some(eq) = content.find('=') else {
                return Err(KvError::Parse {
                    line,
                    reason: format!("expected `key = value`, got `{raw}`"),
                });
            };
            let key = content[..eq].trim();
            let value = content[eq + 1..].trim();
            if key.is_empty() {
                return Err(KvError::Parse {
                    line,
                    reason: "empty key".into(),
                });
            }
            entries.push((key.to_string(), value.to_string()));
        }
        Ok(KvFile { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key)
            .ok_or_else(|| KvError::MissingKey(key.to_string()))
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<f64>().map(Some).map_err(|_| KvError::BadValue {
                key: key.into(),
                reason: format!("`{raw}` is not a number"),
            }),
        }
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, KvError> {
        self.get_f64(key)?
            .ok_or_else(|| KvError::MissingKey(key.to_string()))
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<u64>().map(Some).map_err(|_| KvError::BadValue {
                key: key.into(),
                reason: format!("`{raw}` is not an unsigned integer"),
            }),
        }
    }

    pub fn require_u64(&self, key: &str) -> Result<u64, KvError> {
        self.get_u64(key)?
            .ok_or_else(|| KvError::MissingKey(key.to_string()))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(raw) => Err(KvError::BadValue {
                key: key.into(),
                reason: format!("`{raw}` is not `true`/`false`"),
            }),
        }
    }

    /// Comma-separated list of numbers; an absent key yields an empty list.
    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>, KvError> {
        let Some(raw) = self.get(key) else {
            return Ok(Vec::new());
        };
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|part| {
                part.trim().parse::<f64>().map_err(|_| KvError::BadValue {
                    key: key.into(),
                    reason: format!("`{part}` is not a number"),
                })
            })
            .collect()
    }

    /// Appends or replaces `key` (the last occurrence, matching read order).
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        if let Some(entry) = self.entries.iter_mut().rev().find(|(k, _)| k == key) {
            entry.1 = value;
        } else {
            self.entries.push((key.to_string(), value));
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
