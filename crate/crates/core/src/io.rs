//! Output formatting and metadata sidecars.
//!
//! Every artifact `<file>` is accompanied by `<file>.meta.json` holding the
//! command, the seed, the configuration and its SHA-256 hash. Feeding the
//! sidecar back through `--config` reproduces the artifact byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Fixed 12-significant-digit scientific notation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Builds CSV text with a header row.
pub struct CsvTable {
    text: String,
    width: usize,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text, width: header.len() }
    }

    /// Appends a row of preformatted fields.
    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        debug_assert_eq!(fields.len(), self.width);
        let mut first = true;
        for f in fields {
            if !first {
                self.text.push(',');
            }
            first = false;
            self.text.push_str(f.as_ref());
        }
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub version: String,
}

impl Metadata {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            command: command.to_string(),
            seed,
            config_hash: config_hash(&config)?,
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

/// SHA-256 of the compact JSON encoding (object keys sorted).
pub fn config_hash(config: &serde_json::Value) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes `contents` to `path` and its metadata sidecar next to it.
pub fn write_artifact(path: &Path, contents: &str, meta: &Metadata) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt_f64(0.1), "1.00000000000e-1");
        assert_eq!(fmt_f64(-2.5), "-2.50000000000e0");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a":1,"b":2}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b":2,"a":1}"#).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("out/x.csv")), PathBuf::from("out/x.csv.meta.json"));
    }
}
