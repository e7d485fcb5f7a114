//! Flat `key = value` text with `#` comments.

use std::path::Path;

use crate::error::{Error, Result};

/// One assignment and the 1-based line it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses `text`; `path` only labels errors. Blank lines and anything
/// after `#` are ignored; keys may not repeat.
pub fn parse_kv(text: &str, path: &Path) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(parse_error(path, line, format!("expected `key = value`, got {content:?}")));
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(parse_error(path, line, format!("bad key {key:?}")));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(parse_error(path, line, format!("{key} already set on line {}", prev.line)));
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

pub(crate) fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses `entry.value` as `T`, reporting the entry's line on failure.
pub fn value<T: std::str::FromStr>(entry: &Entry, path: &Path) -> Result<T> {
    entry
        .value
        .parse()
        .map_err(|_| parse_error(path, entry.line, format!("{}: cannot parse {:?}", entry.key, entry.value)))
}

/// Parses a whitespace- or comma-separated list of numbers.
pub fn list<T: std::str::FromStr>(entry: &Entry, path: &Path) -> Result<Vec<T>> {
    entry
        .value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| parse_error(path, entry.line, format!("{}: cannot parse {s:?}", entry.key)))
        })
        .collect()
}
