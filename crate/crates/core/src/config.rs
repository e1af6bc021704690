//! Plain-text `key = value` configuration files.
//!
//! `#` starts a comment, blank lines are ignored, and `_` in keys is read as
//! `-`, so `node_hidden` and `node-hidden` name the same setting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-").to_ascii_lowercase()
}

impl KeyValues {
    pub fn new() -> Self {
        KeyValues::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let key = normalize(k);
            if key.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "empty key".into(),
                });
            }
            entries.insert(key, v.trim().to_string());
        }
        Ok(KeyValues { entries })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        KeyValues::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(normalize(key), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(&normalize(key)).map(String::as_str)
    }

    pub fn get_parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("bad value {v:?} for {key}: {e}")))
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
            })
            .transpose()
    }

    /// Later entries win.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Errors on the first key not in `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_normalizes_keys() {
        let kv = KeyValues::parse("# header\nnode_hidden = 32  # inline\n\nlr=0.01\n").unwrap();
        assert_eq!(kv.get_parsed::<usize>("node-hidden").unwrap(), Some(32));
        assert_eq!(kv.get_parsed::<f64>("lr").unwrap(), Some(0.01));
        assert_eq!(kv.get("missing"), None);
    }

    #[test]
    fn reports_bad_lines_and_values() {
        assert!(matches!(KeyValues::parse("a = 1\nnonsense\n"), Err(Error::Parse { line: 2, .. })));
        let kv = KeyValues::parse("n = x\nflag = maybe").unwrap();
        assert!(kv.get_parsed::<usize>("n").is_err());
        assert!(kv.get_bool("flag").is_err());
    }

    #[test]
    fn display_round_trips() {
        let kv = KeyValues::parse("b = 2\na = hello").unwrap();
        assert_eq!(KeyValues::parse(&kv.to_string()).unwrap(), kv);
    }
}
