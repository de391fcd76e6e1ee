use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Environment variable naming a `key=value` configuration file.
pub const CONFIG_ENV: &str = "SPARSEFLOW_CONFIG";

/// Keys a configuration file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "threads",
    "seed",
    "quiet",
    "t",
    "tau",
    "temperature",
    "min_confidence",
    "gain",
    "bias",
    "radius",
    "scale",
    "sparsity",
];

/// Values from a `key=value` file: one pair per line, `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("config line {}: expected key=value", n + 1)))?;
            let k = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(Error::InvalidParameter(format!("config line {}: unknown key {k:?}", n + 1)));
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The file named by [`CONFIG_ENV`], or an empty configuration.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidParameter(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    /// Flag value, else file value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
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
        let c = ConfigFile::parse("# comment\nt = 0.25\nmin-confidence=0.5 # trailing\n\n").unwrap();
        assert_eq!(c.pick(None, "t", 0.5).unwrap(), 0.25);
        assert_eq!(c.pick(Some(0.75), "t", 0.5).unwrap(), 0.75);
        assert_eq!(c.pick(None, "tau", 0.5).unwrap(), 0.5);
        assert_eq!(c.pick(None, "min_confidence", 0.7).unwrap(), 0.5);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ConfigFile::parse("nonsense").is_err());
        assert!(ConfigFile::parse("colour=red").is_err());
        let c = ConfigFile::parse("t=abc").unwrap();
        assert!(c.get::<f64>("t").is_err());
    }
}
