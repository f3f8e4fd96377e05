use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value as Json;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::Failure;
use crate::run::Outputs;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to rerun and check a result directory. Contains no
/// timestamps or host details, so reruns are byte-identical.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub name: String,
    pub command: String,
    pub scmdyn_version: String,
    pub core_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub model: String,
    pub graph_fingerprint: String,
    pub files: BTreeMap<String, String>,
    pub notes: BTreeMap<String, Json>,
}

fn persist(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    let target = dir.join(name);
    let ctx = || format!("writing {}", target.display());
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Failure::io(ctx(), e))?;
    tmp.write_all(bytes).map_err(|e| Failure::io(ctx(), e))?;
    tmp.as_file().sync_all().map_err(|e| Failure::io(ctx(), e))?;
    tmp.persist(&target).map_err(|e| Failure::io(ctx(), e.error))?;
    Ok(())
}

/// Writes each file by rename from a temporary in the same directory, the
/// manifest last. Nothing is written until every result exists in memory.
pub fn write_all(dir: &Path, outputs: &Outputs, mut manifest: Manifest) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("creating {}", dir.display()), e))?;
    for (name, bytes) in &outputs.files {
        manifest.files.insert(name.clone(), sha256_hex(bytes));
    }
    manifest.notes = outputs.notes.clone();
    for (name, bytes) in &outputs.files {
        persist(dir, name, bytes)?;
    }
    let mut m = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    m.push(b'\n');
    persist(dir, "manifest.json", &m)
}
