// SPDX-License-Identifier: MIT OR Apache-2.0

//! TOML configuration files with one table per subcommand. Top-level keys
//! are global and act as a fallback for every section.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::failure::Failure;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub path: Option<PathBuf>,
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (k, v) in table {
            match v {
                toml::Value::Table(t) => {
                    let entries = sections.entry(k.clone()).or_default();
                    for (key, value) in t {
                        entries.insert(key.clone(), scalar(&value).ok_or_else(|| format!("[{k}] {key}: nested tables are not supported"))?);
                    }
                }
                v => {
                    let value = scalar(&v).ok_or_else(|| format!("{k}: unsupported value"))?;
                    sections.entry(String::new()).or_default().insert(k, value);
                }
            }
        }
        Ok(ConfigFile { path: None, sections })
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .or_else(|| self.sections.get("").and_then(|s| s.get(key)))
            .map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    /// Lookup scoped to one section.
    pub fn section<'a>(&'a self, name: &'a str) -> Section<'a> {
        Section { cfg: self, name }
    }
}

/// Flattens a value to the string form flags take; arrays become
/// comma-separated lists.
fn scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(a) => a.iter().map(scalar).collect::<Option<Vec<_>>>().map(|v| v.join(",")),
        _ => None,
    }
}

#[derive(Clone, Copy)]
pub struct Section<'a> {
    cfg: &'a ConfigFile,
    name: &'a str,
}

impl Section<'_> {
    /// Command-line value if given, else the configured one, parsed.
    pub fn or<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.cfg.get(self.name, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Failure::validation(format!("config [{}] {key} = {v:?}: {e}", self.name))),
        }
    }

    pub fn or_default<T: FromStr>(&self, cli: Option<T>, key: &str, default: T) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.or(cli, key)?.unwrap_or(default))
    }

    pub fn required<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.or(cli, key)?.ok_or_else(|| {
            Failure::validation(format!("missing --{} (or `{key}` in [{}])", key.replace('_', "-"), self.name))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_fall_back_to_globals() {
        let c = ConfigFile::parse("seed = 7\n# note\n[alter]\ntypes = [\"negation\", \"quantity_change\"]\n[eval]\nseed=9\n").unwrap();
        assert_eq!(c.get("alter", "types"), Some("negation,quantity_change"));
        assert_eq!(c.get("alter", "seed"), Some("7"));
        assert_eq!(c.get("eval", "seed"), Some("9"));
        assert_eq!(c.get("eval", "types"), None);
        let s = c.section("alter");
        assert_eq!(s.or::<u64>(None, "seed").unwrap(), Some(7));
        assert_eq!(s.or(Some(3u64), "seed").unwrap(), Some(3));
        assert!(s.or::<u64>(None, "types").is_err());
        assert!(s.required::<u64>(None, "steps").is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(ConfigFile::parse("[alter\n").is_err());
        assert!(ConfigFile::parse("just words\n").is_err());
        assert!(ConfigFile::parse("[a.b]\nc = 1\n").is_err());
        assert_eq!(ConfigFile::parse("").unwrap(), ConfigFile::default());
    }
}
