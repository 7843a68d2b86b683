//! Provenance headers and file emission shared by all experiment outputs.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// First 16 hex digits of the SHA-256 of the compact JSON encoding.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Comment lines (without the leading `#`) identifying the producing
/// command, its configuration and seed.
pub fn provenance<T: Serialize>(command: &str, config: &T, seed: Option<u64>) -> Vec<String> {
    let mut first = format!("oslab {command} config_hash={}", config_hash(config));
    if let Some(s) = seed {
        first.push_str(&format!(" seed={s}"));
    }
    vec![
        first,
        format!("config={}", serde_json::to_string(config).expect("config serializes")),
    ]
}

/// A named output file held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            contents: contents.into(),
        }
    }

    /// Builds a CSV artifact by prefixing `header` comment lines.
    pub fn csv(name: impl Into<String>, header: &[String], body: &str) -> Self {
        let mut s = String::new();
        for h in header {
            s.push_str("# ");
            s.push_str(h);
            s.push('\n');
        }
        s.push_str(body);
        Self::new(name, s)
    }

    pub fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Self {
        let mut s = serde_json::to_string_pretty(value).expect("value serializes");
        s.push('\n');
        Self::new(name, s)
    }
}

/// Writes every artifact into `dir`, creating it if needed.
pub fn write_all(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for a in artifacts {
        fs::write(dir.join(&a.name), a.contents.as_bytes())?;
    }
    Ok(())
}
