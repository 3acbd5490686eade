//! Flat `key = value` text files: one assignment per line, `#` starts a comment.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(source, line_no, format!("expected 'key = value', got '{line}'")));
            };
            let key = k.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::parse(source, line_no, "empty key"));
            }
            if entries.insert(key.clone(), (line_no, v.trim().to_string())).is_some() {
                return Err(Error::parse(source, line_no, format!("duplicate key '{key}'")));
            }
        }
        Ok(KeyValues {
            source: source.to_string(),
            entries,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Insert or replace a value (command-line overrides use line 0).
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries
            .insert(key.to_ascii_lowercase(), (0, value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|(l, _)| *l).unwrap_or(0)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (_, v))| (k.as_str(), v.as_str()))
    }

    pub fn error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::parse(&self.source, self.line_of(key), format!("{key}: {}", message.into()))
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::parse(&self.source, 0, format!("missing key '{key}'")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.require(key)?;
        v.parse::<f64>()
            .map_err(|_| self.error(key, format!("not a number: '{v}'")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(_) => self.f64(key),
            None => Ok(default),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| self.error(key, format!("not a non-negative integer: '{v}'"))),
            None => Ok(default),
        }
    }

    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.require(key)?;
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| self.error(key, format!("not a number: '{}'", s.trim())))
            })
            .collect()
    }

    pub fn triple_f64(&self, key: &str) -> Result<[f64; 3]> {
        let v = self.list_f64(key)?;
        if v.len() != 3 {
            return Err(self.error(key, format!("expected 3 comma-separated values, got {}", v.len())));
        }
        Ok([v[0], v[1], v[2]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_reports_lines() {
        let kv = KeyValues::parse("t", "# head\na = 1.5\n\nb= x # tail\n").unwrap();
        assert_eq!(kv.get("a"), Some("1.5"));
        assert_eq!(kv.get("b"), Some("x"));
        assert_eq!(kv.line_of("b"), 4);
        let err = kv.f64("b").unwrap_err().to_string();
        assert!(err.starts_with("t:4:"), "{err}");
    }

    #[test]
    fn rejects_garbage_line() {
        let err = KeyValues::parse("cfg", "a = 1\nnonsense\n").unwrap_err();
        assert!(err.to_string().starts_with("cfg:2:"));
    }

    #[test]
    fn rejects_duplicates() {
        assert!(KeyValues::parse("cfg", "a = 1\na = 2\n").is_err());
    }
}
