//! `--config` files: a JSON object whose keys override command-line flags.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Overlays the keys of the JSON object in `path` onto `args`. Keys may use
/// dashes or underscores; unknown keys are rejected.
pub fn apply<T: Serialize + DeserializeOwned>(args: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let overrides: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(overrides) = overrides else {
        bail!("config {} must hold a JSON object", path.display());
    };
    let mut merged = serde_json::to_value(args)?;
    let fields = merged.as_object_mut().expect("argument structs serialize to objects");
    for (key, value) in overrides {
        let key = key.replace('-', "_");
        if key == "config" || !fields.contains_key(&key) {
            bail!("config key '{key}' does not apply to this command");
        }
        fields.insert(key, value);
    }
    serde_json::from_value(merged).context("config value has the wrong type")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use std::io::Write;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Flags {
        trials: u64,
        seed: Option<u64>,
        out: Option<String>,
    }

    #[test]
    fn overrides_flags() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"trials": 7, "seed": 3}}"#).unwrap();
        let flags = Flags { trials: 100, seed: None, out: Some("x".into()) };
        let merged = apply(flags, Some(f.path())).unwrap();
        assert_eq!(merged, Flags { trials: 7, seed: Some(3), out: Some("x".into()) });
    }

    #[test]
    fn rejects_unknown_and_mistyped() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"trails": 7}}"#).unwrap();
        let flags = || Flags { trials: 1, seed: None, out: None };
        assert!(apply(flags(), Some(f.path())).is_err());
        let mut g = tempfile::NamedTempFile::new().unwrap();
        write!(g, r#"{{"trials": "many"}}"#).unwrap();
        assert!(apply(flags(), Some(g.path())).is_err());
        assert_eq!(apply(flags(), None).unwrap(), flags());
    }
}
