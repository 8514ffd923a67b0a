//! Strict reader over a flat `key = value` table.
//!
//! Config files are TOML-syntax key/value documents. Each consumer takes the
//! keys it understands; whatever is left over at the end is reported as an
//! unknown key.

use std::path::Path;

use serde::de::DeserializeOwned;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum KvError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown key(s): {}", .0.join(", "))]
    Unknown(Vec<String>),
}

pub struct KvReader {
    table: Table,
}

impl KvReader {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| KvError::Syntax(e.to_string()))?;
        Ok(Self { table })
    }

    pub fn from_file(path: &Path) -> Result<Self, KvError> {
        let text = std::fs::read_to_string(path).map_err(|source| KvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn has(&self, key: &str) -> bool {
        self.table.contains_key(key)
    }

    pub fn take<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>, KvError> {
        match self.table.remove(key) {
            None => Ok(None),
            Some(value) => value.try_into().map(Some).map_err(|e: toml::de::Error| KvError::Invalid {
                key: key.to_string(),
                message: e.message().to_string(),
            }),
        }
    }

    pub fn take_or<T: DeserializeOwned>(&mut self, key: &str, default: T) -> Result<T, KvError> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: DeserializeOwned>(&mut self, key: &str) -> Result<T, KvError> {
        self.take(key)?.ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn take_raw(&mut self, key: &str) -> Option<Value> {
        self.table.remove(key)
    }

    /// Keys not consumed so far, in sorted order.
    pub fn remaining(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.table.keys().cloned().collect();
        keys.sort();
        keys
    }

    pub fn finish(self) -> Result<(), KvError> {
        let keys = self.remaining();
        if keys.is_empty() {
            Ok(())
        } else {
            Err(KvError::Unknown(keys))
        }
    }
}

pub(crate) fn invalid(key: &str, message: impl Into<String>) -> KvError {
    KvError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_read_as_floats_and_leftovers_are_reported() {
        let mut kv = KvReader::parse("a = 3\nb = [0, -1]\nzz = 1\n").unwrap();
        let a: f64 = kv.require("a").unwrap();
        let b: Vec<f64> = kv.require("b").unwrap();
        assert_eq!(a, 3.0);
        assert_eq!(b, vec![0.0, -1.0]);
        match kv.finish() {
            Err(KvError::Unknown(keys)) => assert_eq!(keys, vec!["zz".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
