//! Plain-text `key = value` configuration files shared by all subsystems.
//!
//! Format: one `key = value` pair per line, `#` starts a comment, blank lines
//! ignored. Unknown keys are left for other consumers of the same file, so a
//! single file can configure the scene, preprocessing, model, and training.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("{key}: not a number: {v:?}")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| Error::Config(format!("{key}: not an integer: {v:?}")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.get_u64(key)?.map(|v| v as usize))
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.entries
            .get(key)
            .map(|v| match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(Error::Config(format!("{key}: not a boolean: {other:?}"))),
            })
            .transpose()
    }

    /// Comma-separated list of unsigned integers, e.g. `16,32,64,128`.
    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.entries
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|part| {
                        part.trim().parse::<usize>().map_err(|_| {
                            Error::Config(format!("{key}: bad list element {part:?}"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_blanks() {
        let kv = KvConfig::parse("a = 1\n\n# comment\nb = two # trailing\n").unwrap();
        assert_eq!(kv.get_f64("a").unwrap(), Some(1.0));
        assert_eq!(kv.get_str("b"), Some("two"));
        assert_eq!(kv.get_str("missing"), None);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(KvConfig::parse("a = 1\na = 2\n").is_err());
        assert!(KvConfig::parse("just words\n").is_err());
        let kv = KvConfig::parse("n = x\n").unwrap();
        assert!(kv.get_u64("n").is_err());
    }

    #[test]
    fn parses_lists() {
        let kv = KvConfig::parse("ch = 16, 32,64,128\n").unwrap();
        assert_eq!(
            kv.get_usize_list("ch").unwrap(),
            Some(vec![16, 32, 64, 128])
        );
    }
}
