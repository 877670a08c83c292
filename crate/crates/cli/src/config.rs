//! TOML config files with `--set key.path=value` overrides.
//!
//! The config hash is the SHA-256 of the table after overrides, re-rendered
//! by `toml`, so formatting and comments in the file do not change it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub value: T,
    pub hash: String,
    /// Directory of the config file; relative paths inside it resolve here.
    pub base_dir: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn load<T: DeserializeOwned>(path: &Path, sets: &[String]) -> CliResult<Loaded<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display())))?;
    for s in sets {
        apply_override(&mut table, s)?;
    }
    let canonical = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
    // Parse the original text when possible so errors carry its line numbers.
    let value = if sets.is_empty() {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&canonical)
            .map_err(|e| CliError::Config(format!("{} (after --set overrides): {e}", path.display())))?
    };
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded {
        value,
        hash: sha256_hex(canonical.as_bytes()),
        base_dir,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `a.b.c=value`; the value is read as TOML, falling back to a bare string.
pub fn apply_override(table: &mut Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set `{assignment}`: expected key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("--set `{assignment}`: empty key segment")));
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set `{assignment}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_toml_values_and_create_tables() {
        let mut t: Table = "seed = 1\n[train]\nlearning_rate = 0.1\n".parse().unwrap();
        apply_override(&mut t, "train.learning_rate=1e-3").unwrap();
        apply_override(&mut t, "train.cell=euler").unwrap();
        apply_override(&mut t, "force.kind=\"identity\"").unwrap();
        assert_eq!(t["train"]["learning_rate"].as_float(), Some(1e-3));
        assert_eq!(t["train"]["cell"].as_str(), Some("euler"));
        assert_eq!(t["force"]["kind"].as_str(), Some("identity"));
        assert!(apply_override(&mut t, "seed.x=1").is_err());
        assert!(apply_override(&mut t, "novalue").is_err());
    }

    #[test]
    fn hash_ignores_formatting() {
        let a: Table = "x = 1\ny = 2 # note\n".parse().unwrap();
        let b: Table = "y=2\n\nx=1".parse().unwrap();
        let h = |t: &Table| sha256_hex(toml::to_string(t).unwrap().as_bytes());
        assert_eq!(h(&a), h(&b));
        assert_eq!(h(&a).len(), 64);
    }
}
