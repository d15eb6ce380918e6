//! Flat `key = value` config files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key a config file may set. Keys not used by the running command
/// are ignored, so one file can serve a whole experiment.
pub const KNOWN_KEYS: &[&str] = &[
    "rooms",
    "seed",
    "corners",
    "complex_only",
    "width",
    "eval_width",
    "line_thickness",
    "blur_sigma",
    "noise_sigma",
    "noise_spurious",
    "noise_dropout",
    "ransac_seed",
    "camera_height",
    "max_corners",
    "max_hypotheses",
    "refine",
    "threshold",
    "channel",
];

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!("config line {}: expected key = value", n + 1)));
            };
            let k = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(CliError::Config(format!("config line {}: unknown key {k:?}", n + 1)));
            }
            if values.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("config line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// Flag value if given, else the file value, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(text) => text
                .parse()
                .map_err(|e| CliError::Config(format!("config key {key}: {text:?}: {e}"))),
            None => Ok(default),
        }
    }
}

/// Comma-separated list such as `4,6,8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountList(pub Vec<usize>);

impl FromStr for CountList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(CountList)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let f = FileConfig::parse("rooms = 12\n# note\nseed=3 # trailing\n").unwrap();
        assert_eq!(f.pick(Some(5usize), "rooms", 200).unwrap(), 5);
        assert_eq!(f.pick(None, "rooms", 200usize).unwrap(), 12);
        assert_eq!(f.pick(None, "seed", 0u64).unwrap(), 3);
        assert_eq!(f.pick(None, "width", 128usize).unwrap(), 128);
    }

    #[test]
    fn rejects_unknown_and_malformed_lines() {
        assert!(FileConfig::parse("colour = red").is_err());
        assert!(FileConfig::parse("rooms").is_err());
        assert!(FileConfig::parse("rooms = 1\nrooms = 2").is_err());
        let f = FileConfig::parse("rooms = many").unwrap();
        assert!(f.pick(None, "rooms", 1usize).is_err());
    }

    #[test]
    fn count_list_parses() {
        assert_eq!("4, 6,8".parse::<CountList>().unwrap(), CountList(vec![4, 6, 8]));
        assert!("4,x".parse::<CountList>().is_err());
    }
}
