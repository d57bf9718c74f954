use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Stamp embedded in every produced artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn for_config<T: Serialize>(config: &T) -> Self {
        Provenance {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash(config),
        }
    }

    pub fn banner(&self) -> String {
        format!("{} config={}", self.tool_version, self.config_hash)
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: "unspecified".to_string(),
        }
    }
}

/// First 16 hex digits of SHA-256 over the compact JSON form.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
