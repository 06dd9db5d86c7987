//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the long
//! flag names (`weight-group`, `eta`, ...); `_` is accepted in place of `-`.
//! Command-line flags take precedence over file entries.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key = value", n + 1))
            })?;
            entries.insert(normalize(k.trim()), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(CliError::io(path.display().to_string()))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn normalize(key: &str) -> String {
    key.replace('_', "-").to_ascii_lowercase()
}

/// Resolves each setting from a flag, then the file, then a default, and
/// records the result for the reproducibility stanza.
#[derive(Debug)]
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    pub resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Self {
            file,
            resolved: BTreeMap::new(),
        }
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(
                    raw.parse()
                        .map_err(|e| CliError::Usage(format!("config key {key}: {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn or<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.optional(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting --{key}")))
    }

    /// Rejects file keys this command does not understand.
    pub fn finish(&self, known: &[&str]) -> Result<()> {
        match self.file.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(CliError::Usage(format!("unknown config key {k}"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file =
            ConfigFile::parse("# comment\n\neta = 0.1\nweight_group=1024\nseed = 3\n").unwrap();
        let mut r = Resolver::new(&file);
        assert_eq!(r.or("eta", Some(0.5f32), 0.05).unwrap(), 0.5);
        assert_eq!(r.or("weight-group", None::<usize>, 2048).unwrap(), 1024);
        assert_eq!(r.or("grad-group", None::<usize>, 128).unwrap(), 128);
        assert_eq!(r.required::<u64>("seed", None).unwrap(), 3);
        assert_eq!(r.resolved["eta"], "0.5");
        assert!(r.finish(&["eta", "weight-group", "seed"]).is_ok());
        assert!(r.finish(&["eta"]).is_err());
    }

    #[test]
    fn errors() {
        assert!(ConfigFile::parse("no equals sign").is_err());
        let file = ConfigFile::parse("eta = fast").unwrap();
        assert!(Resolver::new(&file).optional::<f32>("eta", None).is_err());
        assert!(Resolver::new(&ConfigFile::default())
            .required::<u64>("seed", None)
            .is_err());
    }
}
