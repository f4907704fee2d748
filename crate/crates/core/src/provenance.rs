//! Provenance stamped on every artifact the pipeline writes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_sha256: Option<String>,
    /// Hashes of other input files, keyed by role ("human", "scores", ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new() -> Self {
        Provenance {
            tool_version: TOOL_VERSION.to_string(),
            ..Provenance::default()
        }
    }

    pub fn with_input(mut self, role: &str, sha256: String) -> Self {
        self.inputs.insert(role.to_string(), sha256);
        self
    }

    /// Single-line form used as a `#` comment atop CSV outputs.
    pub fn comment_line(&self) -> String {
        let mut s = format!("# stereo-meter {}", self.tool_version);
        if let Some(c) = &self.config_sha256 {
            s.push_str(&format!(" config={c}"));
        }
        if let Some(b) = &self.bundle_sha256 {
            s.push_str(&format!(" bundle={b}"));
        }
        for (k, v) in &self.inputs {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comment_line_lists_hashes_in_order() {
        let p = Provenance {
            config_sha256: Some("abc".into()),
            ..Provenance::new()
        }
        .with_input("zeta", "2".into())
        .with_input("alpha", "1".into());
        let line = p.comment_line();
        assert!(line.starts_with("# stereo-meter "));
        assert!(line.ends_with("config=abc alpha=1 zeta=2"));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
