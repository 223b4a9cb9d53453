//! Layered run settings: command-line flags over the config file over
//! built-in defaults.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use audioseq::kv::KeyValues;
use audioseq::model::MODEL_KEYS;
use audioseq::training::TRAIN_KEYS;
use clap::ValueEnum;

/// Keys that select data, splits and output rather than the model or the
/// optimizer.
pub const RUN_KEYS: [&str; 5] = ["manifest", "fold", "test_fraction", "precision", "out"];

/// Bad invocation or configuration. Exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

pub struct Settings {
    kv: KeyValues,
}

impl Settings {
    /// Reads `config` if given, checks its keys, then overlays `flags`.
    pub fn load(config: Option<&Path>, flags: &KeyValues) -> Result<Self, UsageError> {
        let mut kv = match config {
            Some(path) => read_config(path)?,
            None => KeyValues::new(),
        };
        kv.merge(flags);
        Ok(Self { kv })
    }

    pub fn kv(&self) -> &KeyValues {
        &self.kv
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        Ok(self.kv.get_parsed("seed")?.unwrap_or(0))
    }

    pub fn precision(&self) -> Result<Precision, UsageError> {
        match self.kv.get("precision") {
            None => Ok(Precision::F32),
            Some(p) => Precision::from_str(p, true)
                .map_err(|_| UsageError(format!("precision must be f32 or f64, got `{p}`"))),
        }
    }

    pub fn out(&self) -> Option<PathBuf> {
        self.kv.get("out").map(PathBuf::from)
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn read_config(path: &Path) -> Result<KeyValues, UsageError> {
    let text = fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let kv = KeyValues::parse(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let known: Vec<&str> = MODEL_KEYS
        .iter()
        .chain(TRAIN_KEYS)
        .chain(&RUN_KEYS)
        .copied()
        .collect();
    kv.check_known(&known)
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    Ok(kv)
}

/// Sets `key` in `kv` when the flag was given.
pub fn set_opt(kv: &mut KeyValues, key: &str, value: Option<impl ToString>) {
    if let Some(v) = value {
        kv.set(key, v.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "epochs = 10\nlr = 1e-3\nprecision = f64\n").unwrap();
        let mut flags = KeyValues::new();
        flags.set("epochs", 3);
        let s = Settings::load(Some(&path), &flags).unwrap();
        assert_eq!(s.kv().get("epochs"), Some("3"));
        assert_eq!(s.kv().get("lr"), Some("1e-3"));
        assert_eq!(s.precision().unwrap(), Precision::F64);
        assert_eq!(s.seed().unwrap(), 0);
    }

    #[test]
    fn rejects_unknown_keys_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "epoch = 10\n").unwrap();
        let err = Settings::load(Some(&path), &KeyValues::new())
            .err()
            .unwrap();
        assert!(err.0.contains("unknown key `epoch`"), "{err}");
        let missing = dir.path().join("nope.cfg");
        let err = Settings::load(Some(&missing), &KeyValues::new())
            .err()
            .unwrap();
        assert!(err.0.contains("nope.cfg"), "{err}");
    }
}
