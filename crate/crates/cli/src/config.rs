//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Command-line flags
//! always win over values read here.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult, Kind};

pub const KEYS: &[&str] = &[
    "endpoint",
    "model",
    "chunk_size",
    "window",
    "fuzzy",
    "vr_drop",
    "ag_drop",
    "epochs",
    "lr",
    "batch",
    "seed",
    "rate",
    "parallelism",
    "max_retries",
    "timeout_secs",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            let kind = if e.kind() == std::io::ErrorKind::NotFound {
                Kind::MissingInput
            } else {
                Kind::Other
            };
            CliError::new(kind, format!("{}: {e}", path.display()))
        })?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!("line {}: expected key = value", i + 1)));
            };
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::config(format!("line {}: unknown key {key:?}", i + 1)));
            }
            values.insert(key, value.trim().to_owned());
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|e| CliError::config(format!("config key {key} = {raw:?}: {e}")))
            })
            .transpose()
    }

    /// Flag value if given, else the config value, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_precedence() {
        let cfg = ConfigFile::parse("# comment\nwindow = 8\n\nvr-drop=0.2\nmodel = gpt-4-32k\n").unwrap();
        assert_eq!(cfg.resolve(None, "window", 20usize).unwrap(), 8);
        assert_eq!(cfg.resolve(Some(4usize), "window", 20).unwrap(), 4);
        assert_eq!(cfg.resolve(None, "epochs", 10usize).unwrap(), 10);
        assert_eq!(cfg.get::<f64>("vr_drop").unwrap(), Some(0.2));
        assert_eq!(cfg.get::<String>("model").unwrap().as_deref(), Some("gpt-4-32k"));
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(ConfigFile::parse("window 8").unwrap_err().kind, Kind::Config);
        assert_eq!(ConfigFile::parse("colour = red").unwrap_err().kind, Kind::Config);
        let cfg = ConfigFile::parse("window = eight").unwrap();
        assert_eq!(cfg.get::<usize>("window").unwrap_err().kind, Kind::Config);
    }
}
