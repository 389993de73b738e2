//! `key = value` configuration files merged with command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Value,
    Switch,
}

/// One configuration key. Its flag is the name with `_` replaced by `-`.
#[derive(Debug, Clone, Copy)]
pub struct KeyInfo {
    pub name: &'static str,
    pub kind: KeyKind,
    pub help: &'static str,
}

const fn value(name: &'static str, help: &'static str) -> KeyInfo {
    KeyInfo {
        name,
        kind: KeyKind::Value,
        help,
    }
}

const fn switch(name: &'static str, help: &'static str) -> KeyInfo {
    KeyInfo {
        name,
        kind: KeyKind::Switch,
        help,
    }
}

pub const KEYS: &[KeyInfo] = &[
    value("data", "dataset directory"),
    value("out", "output path"),
    value("model", "model file (SRLM)"),
    value("places", "synthetic places"),
    value("views", "synthetic views per place"),
    value("dim", "synthetic feature depth D"),
    value("height", "synthetic feature map height"),
    value("width", "synthetic feature map width"),
    value("informative_fraction", "synthetic fraction of place-specific cells"),
    value("clutter_noise", "synthetic clutter noise scale"),
    value("view_noise", "synthetic per-view noise scale"),
    value("val_fraction", "fraction of places held out for validation"),
    value("mode", "initialization mode: normal or semantic"),
    value("clusters", "number of clusters K"),
    value("shadows", "shadow centroids per cluster S"),
    value("scale", "softmax decay constant a"),
    value("pool_size", "features sampled for k-means"),
    value("candidates", "shadow candidate clusters (semantic mode)"),
    value("partition", "static/dynamic class partition file"),
    value("learning_rate", "initial SGD learning rate"),
    value("momentum", "SGD momentum"),
    value("weight_decay", "L2 weight decay"),
    value("margin", "triplet margin"),
    value("epochs", "training epochs"),
    value("lr_halving_period", "epochs between learning-rate halvings"),
    value("early_stop_patience", "epochs without improvement before stopping"),
    value("batch_size", "tuples per SGD step"),
    value("num_negatives", "negatives per training tuple"),
    value("positive_radius", "metres within which a database image may be a positive"),
    value("negative_radius", "metres beyond which a database image is a negative"),
    value("success_radius", "metres within which a retrieval counts as correct"),
    value("history", "training history CSV output"),
    value("checkpoint", "checkpoint output (model plus optimizer state)"),
    value("resume", "checkpoint to resume from"),
    value("split", "split to select: train, val, test or all"),
    value("role", "role to select: db, query or all"),
    value("ids", "comma-separated image ids"),
    switch("baseline", "use the shadow-free soft-assignment baseline encoder"),
    value("input", "descriptor set to transform"),
    value("fit", "descriptor set to fit whitening on"),
    value("transform", "whitening transform to load (SRLW)"),
    value("save_transform", "where to save a fitted whitening transform"),
    value("whiten_dim", "whitened output dimension"),
    value("whiten_epsilon", "eigenvalue floor added before the inverse square root"),
    switch("strict", "fail instead of clamping a rank-deficient whitening"),
    value("db", "database descriptor set"),
    value("queries", "query descriptor set"),
    value("geotags", "geotag manifest CSV"),
    value("n", "comma-separated recall cut-offs"),
    value("gnuplot", "gnuplot data output"),
    value("index", "where to save the built index (SRLI)"),
    value("instances", "random gradient-check instances"),
    value("tolerance", "maximum accepted relative gradient error"),
];

pub fn key_info(name: &str) -> Option<&'static KeyInfo> {
    KEYS.iter().find(|k| k.name == name)
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Resolved settings: file values overridden by flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if key_info(k).is_none() {
                return Err(Error::Config(format!("config line {}: unknown key {k:?}", n + 1)));
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("config line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("config {} is not UTF-8", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        debug_assert!(key_info(key).is_some(), "unregistered key {key}");
        self.values.insert(key.to_string(), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("bad value {v:?} for {key}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing required setting {key} (--{})", flag_name(key))))
    }

    pub fn switch(&self, key: &str) -> Result<bool> {
        self.get_or(key, false)
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| Error::Config(format!("bad list item {s:?} for {key}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_types() {
        let s = Settings::parse("# comment\nclusters = 16\n\nlearning_rate=0.5\nn = 1, 5,10\nstrict = true\n").unwrap();
        assert_eq!(s.require::<usize>("clusters").unwrap(), 16);
        assert_eq!(s.get::<f64>("learning_rate").unwrap(), Some(0.5));
        assert_eq!(s.list::<usize>("n").unwrap(), Some(vec![1, 5, 10]));
        assert!(s.switch("strict").unwrap());
        assert!(!s.switch("baseline").unwrap());
        assert_eq!(s.get_or("shadows", 2usize).unwrap(), 2);
    }

    #[test]
    fn errors_are_config_errors() {
        for bad in ["nonsense", "bogus_key = 1", "clusters = 1\nclusters = 2"] {
            assert!(matches!(Settings::parse(bad), Err(Error::Config(_))), "{bad}");
        }
        let s = Settings::parse("clusters = many").unwrap();
        assert!(matches!(s.get::<usize>("clusters"), Err(Error::Config(_))));
        assert!(matches!(s.require::<String>("out"), Err(Error::Config(_))));
    }

    #[test]
    fn non_utf8_file() {
        let tmp = tempfile::NamedTempFile::new().unwrap();
        fs::write(tmp.path(), [0x63, 0x3d, 0xff, 0xfe]).unwrap();
        assert!(matches!(Settings::load(tmp.path()), Err(Error::Config(_))));
    }

    #[test]
    fn keys_are_unique() {
        for (i, k) in KEYS.iter().enumerate() {
            assert!(KEYS[i + 1..].iter().all(|o| o.name != k.name), "{}", k.name);
        }
    }
}
