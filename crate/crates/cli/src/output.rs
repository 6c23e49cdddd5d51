//! Artifact writers: JSON and CSV emission with deterministic formatting.
//!
//! Computed numbers are rounded to 12 significant digits before
//! serialization so reruns with the same config and seed produce
//! byte-identical files on any platform with IEEE-754 doubles.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant decimal digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.*e}", SIGNIFICANT_DIGITS - 1)
        .parse()
        .expect("scientific notation round-trips")
}

/// Recursively rounds every number in a JSON document.
pub fn round_json(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                if n.is_f64() {
                    if let Some(rounded) = serde_json::Number::from_f64(round_sig(x)) {
                        *value = Value::Number(rounded);
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Accumulates artifacts for one command run and records their names for
/// the manifest.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::other(format!("creating {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    /// Serializes `data` to pretty JSON with rounded numbers.
    pub fn write_json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<(), CliError> {
        let mut value = serde_json::to_value(data)
            .map_err(|e| CliError::other(format!("serializing {name}: {e}")))?;
        round_json(&mut value);
        let text = serde_json::to_string_pretty(&value)
            .map_err(|e| CliError::other(format!("serializing {name}: {e}")))?;
        self.write_bytes(name, format!("{text}\n").as_bytes())
    }

    /// Writes CSV rows; the header is emitted verbatim, each row's cells
    /// are joined with commas, and float cells are pre-rounded by the
    /// caller through [`csv_num`].
    pub fn write_csv(
        &mut self,
        name: &str,
        header: &str,
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        let mut text = String::from(header);
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        let mut file = fs::File::create(&path)
            .map_err(|e| CliError::other(format!("writing {}: {e}", path.display())))?;
        file.write_all(bytes)
            .map_err(|e| CliError::other(format!("writing {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes `manifest.json` listing everything produced so far.
    pub fn write_manifest(&mut self, manifest: &Manifest) -> Result<(), CliError> {
        let mut manifest = manifest.clone();
        manifest.artifacts = self.written.clone();
        manifest.artifacts.sort();
        self.write_json("manifest.json", &manifest)
    }
}

/// Provenance record for a run: enough to reproduce it bit for bit.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub versions: Versions,
    pub effective: Effective,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub cli: String,
    pub core: String,
}

/// Settings after command-line overrides were applied.
#[derive(Debug, Clone, Serialize)]
pub struct Effective {
    pub tau_max: u32,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Formats a float CSV cell: shortest representation of the rounded value.
pub fn csv_num(x: f64) -> String {
    format!("{}", round_sig(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(1234.567890123456), 1234.56789012);
        assert_eq!(round_sig(-9.876543210987654e-7), -9.87654321099e-7);
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(round_sig(5.0), 5.0);
    }

    #[test]
    fn json_walker_rounds_nested_numbers() {
        let mut v = serde_json::json!({
            "a": [1.0000000000001, {"b": 2.999999999999999}],
            "keep": "text",
            "n": 7
        });
        round_json(&mut v);
        assert_eq!(v["a"][0], 1.0);
        assert_eq!(v["a"][1]["b"], 3.0);
        assert_eq!(v["n"], 7);
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
