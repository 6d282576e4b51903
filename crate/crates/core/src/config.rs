//! Line-oriented `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

/// Ordered key/value pairs with the line each key came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: n + 1, msg: format!("expected key=value, got '{line}'") });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse { line: n + 1, msg: "empty key".into() });
            }
            entries.insert(key.to_string(), (v.trim().to_string(), n + 1));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(_, l)| *l)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (v, _))| (k.as_str(), v.as_str()))
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    /// `key = value` lines in key order; parses back to the same pairs.
    pub fn to_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses `key` if present.
    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Parse { line: *line, msg: format!("cannot parse value '{v}' for '{key}'") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse("# header\nk = 16\n\nnonzero=0.5 # trailing\n").unwrap();
        assert_eq!(kv.get("k"), Some("16"));
        assert_eq!(kv.parsed::<f64>("nonzero").unwrap(), Some(0.5));
        assert_eq!(kv.line_of("nonzero"), Some(4));
        assert_eq!(kv.parsed::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn reports_bad_lines() {
        let err = KeyValues::parse("k=1\njunk\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let kv = KeyValues::parse("k=abc").unwrap();
        assert!(matches!(kv.parsed::<usize>("k"), Err(Error::Parse { line: 1, .. })));
    }
}
