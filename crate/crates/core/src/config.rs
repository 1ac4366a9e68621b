//! Flat `key = value` configuration text with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Values run to the end
//! of the line. Sections (`model.`, `loss.`, ...) are dispatched by prefix.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key = value` lines, keeping file order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(existing, _): &(String, String)| existing == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Renders entries as `key = value` lines.
pub fn render_kv(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

pub fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>>
where
    V::Err: Display,
{
    value
        .split(',')
        .map(|s| parse_value(key, s.trim()))
        .collect()
}

pub fn join<V: Display>(items: &[V]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// A configuration struct addressable by flat keys.
pub trait KvSection {
    /// Key prefix without the trailing dot, e.g. `model`.
    const PREFIX: &'static str;

    /// Applies one key (without prefix). Unknown keys are errors.
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    /// All keys (without prefix) and their current values.
    fn entries(&self) -> Vec<(String, String)>;

    /// Checks cross-field invariants.
    fn validate(&self) -> Result<()>;

    fn to_kv(&self) -> Vec<(String, String)> {
        self.entries()
            .into_iter()
            .map(|(k, v)| (format!("{}.{k}", Self::PREFIX), v))
            .collect()
    }

    /// Applies every entry whose key carries this section's prefix and returns
    /// the rest.
    fn apply(&mut self, entries: Vec<(String, String)>) -> Result<Vec<(String, String)>> {
        let mut rest = Vec::new();
        for (k, v) in entries {
            match k.strip_prefix(Self::PREFIX).and_then(|s| s.strip_prefix('.')) {
                Some(sub) => self.set(sub, &v)?,
                None => rest.push((k, v)),
            }
        }
        Ok(rest)
    }
}

pub(crate) fn unknown_key(prefix: &str, key: &str) -> Error {
    Error::Config(format!("unknown key `{prefix}.{key}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let kv = parse_kv("# comment\n\nmodel.C = 16\n train.lr=1e-4 \n").unwrap();
        assert_eq!(
            kv,
            vec![
                ("model.C".to_string(), "16".to_string()),
                ("train.lr".to_string(), "1e-4".to_string())
            ]
        );
    }

    #[test]
    fn rejects_malformed_and_duplicates() {
        assert!(parse_kv("model.C 16").is_err());
        assert!(parse_kv("a = 1\na = 2").is_err());
        assert!(parse_kv(" = 2").is_err());
    }
}
