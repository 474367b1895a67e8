//! Flat `key = value` configuration files and the precedence machinery
//! that layers them between built-in defaults and command-line flags.

use pcdistill::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// A parsed configuration file: UTF-8 lines of `key = value`, with `#`
/// starting a comment and blank lines ignored.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
    path: PathBuf,
}

/// Reads and parses a configuration file, rejecting malformed lines with
/// their line number.
pub fn load(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(path, idx + 1, format!("expected `key = value`, got {raw:?}")));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::parse(path, idx + 1, "empty key before `=`"));
        }
        if entries.insert(key.clone(), value).is_some() {
            return Err(Error::parse(path, idx + 1, format!("duplicate key {key:?}")));
        }
    }
    Ok(FileConfig { entries, path: path.to_path_buf() })
}

impl FileConfig {
    /// Raw value for a key, when present.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    /// Errors if the file contains any key outside the allowed set.
    pub fn reject_unknown_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}: unknown key {key:?} (allowed: {})",
                    self.path.display(),
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// Parses a raw string as `T`, naming the key on failure.
pub fn parse_value<T>(key: &str, raw: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    raw.parse::<T>()
        .map_err(|e| Error::Config(format!("key {key}: cannot parse {raw:?}: {e}")))
}

/// Resolves one setting with precedence: explicit flag over config file
/// over built-in default.
pub fn resolve<T>(file: Option<&FileConfig>, key: &str, flag: Option<T>, default: T) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(cfg) = file {
        if let Some(raw) = cfg.get(key) {
            return parse_value(key, raw);
        }
    }
    Ok(default)
}

/// Like [`resolve`] but for settings with no default, which stay `None`
/// unless the file or a flag provides them.
pub fn resolve_optional<T>(file: Option<&FileConfig>, key: &str, flag: Option<T>) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: Display,
{
    if let Some(v) = flag {
        return Ok(Some(v));
    }
    if let Some(cfg) = file {
        if let Some(raw) = cfg.get(key) {
            return Ok(Some(parse_value(key, raw)?));
        }
    }
    Ok(None)
}
