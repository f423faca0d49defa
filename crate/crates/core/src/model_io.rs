//! Versioned JSON containers for trained artifacts.
//!
//! Every artifact file is a single JSON object `{magic, version, payload}`.
//! The magic string separates forest, network and AU files; `version` gates
//! format evolution. Floats are written with shortest-round-trip formatting,
//! so a reload is bit-exact and re-serialization is byte-identical.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::au::AuForest;
use crate::confidence::ConfidenceNetwork;
use crate::error::{Error, Result};
use crate::forest::LocalForest;

pub const FOREST_MAGIC: &str = "lep-forest";
pub const NETWORK_MAGIC: &str = "lep-network";
pub const AU_MAGIC: &str = "lep-au";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Container<T> {
    magic: String,
    version: u32,
    payload: T,
}

fn save<T: Serialize>(value: &T, magic: &str, path: &Path) -> Result<()> {
    let container = Container {
        magic: magic.to_string(),
        version: FORMAT_VERSION,
        payload: value,
    };
    let json = serde_json::to_string(&container)
        .map_err(|e| Error::Model(format!("serialization failed: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn load<T: DeserializeOwned>(magic: &str, path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    // check magic and version before touching the payload, so a wrong file
    // kind is reported as such rather than as a schema mismatch
    let container: Container<serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| Error::Model(format!("{}: corrupt container: {e}", path.display())))?;
    if container.magic != magic {
        return Err(Error::Model(format!(
            "{}: expected a {magic} file, found {}",
            path.display(),
            container.magic
        )));
    }
    if container.version != FORMAT_VERSION {
        return Err(Error::Model(format!(
            "{}: unsupported format version {} (supported: {FORMAT_VERSION})",
            path.display(),
            container.version
        )));
    }
    serde_json::from_value(container.payload)
        .map_err(|e| Error::Model(format!("{}: corrupt payload: {e}", path.display())))
}

pub fn save_forest(model: &LocalForest, path: &Path) -> Result<()> {
    save(model, FOREST_MAGIC, path)
}

pub fn load_forest(path: &Path) -> Result<LocalForest> {
    load(FOREST_MAGIC, path)
}

pub fn save_network(network: &ConfidenceNetwork, path: &Path) -> Result<()> {
    save(network, NETWORK_MAGIC, path)
}

pub fn load_network(path: &Path) -> Result<ConfidenceNetwork> {
    load(NETWORK_MAGIC, path)
}

pub fn save_au_forest(model: &AuForest, path: &Path) -> Result<()> {
    save(model, AU_MAGIC, path)
}

pub fn load_au_forest(path: &Path) -> Result<AuForest> {
    load(AU_MAGIC, path)
}
