//! `key = value` settings files. A flag given on the command line wins over
//! the same key in the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Default)]
pub struct Settings {
    path: Option<PathBuf>,
    values: BTreeMap<String, (usize, String)>,
}

/// Keys are written like the long flags; underscores also work.
fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl Settings {
    /// Reads `path`, rejecting keys that are not in `allowed`.
    pub fn load(path: Option<&Path>, allowed: &[String]) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, path, allowed)
    }

    pub fn parse(text: &str, path: &Path, allowed: &[String]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!(
                    "{}:{}: expected 'key = value', found '{line}'",
                    path.display(),
                    i + 1
                )
            })?;
            let key = normalize_key(key);
            if !allowed.contains(&key) {
                bail!(
                    "{}:{}: unknown key '{key}' (allowed: {})",
                    path.display(),
                    i + 1,
                    allowed.join(", ")
                );
            }
            if values
                .insert(key.clone(), (i + 1, value.trim().to_string()))
                .is_some()
            {
                bail!("{}:{}: key '{key}' given twice", path.display(), i + 1);
            }
        }
        Ok(Settings {
            path: Some(path.to_path_buf()),
            values,
        })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let Some((line, raw)) = self.values.get(key) else {
            return Ok(None);
        };
        let path = self.path.as_deref().unwrap_or(Path::new("config"));
        raw.parse().map(Some).map_err(|e| {
            anyhow!(
                "{}:{line}: bad value '{raw}' for {key}: {e}",
                path.display()
            )
        })
    }

    /// The flag value, else the file value, else nothing.
    pub fn opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.file_value(key),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(key, flag)?
            .ok_or_else(|| anyhow!("missing required setting --{key}"))
    }

    /// A switch is on when the flag is given or the file sets it true.
    pub fn switch(&self, key: &str, flag: bool) -> Result<bool> {
        Ok(flag || self.file_value::<bool>(key)?.unwrap_or(false))
    }
}

/// Comma-separated list such as `16,16,32`.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("'{p}': {e}")))
            .collect::<std::result::Result<Vec<T>, String>>()
            .map(List)
    }
}
