//! Training checkpoints: the extended PLY plus a versioned binary optimizer state.

use std::fs;
use std::path::{Path, PathBuf};

use refsplat_core::optim::TrainerSnapshot;
use refsplat_core::GaussianCloud;

use crate::error::{Error, Result};
use crate::ply;

const MAGIC: &[u8; 8] = b"RSPLTSTA";
pub const STATE_VERSION: u32 = 1;

pub const CLOUD_FILE: &str = "cloud.ply";
pub const STATE_FILE: &str = "state.bin";

pub fn encode_state(snap: &TrainerSnapshot) -> Vec<u8> {
    let mut out = Vec::from(&MAGIC[..]);
    out.extend(STATE_VERSION.to_le_bytes());
    out.extend(bincode::serialize(snap).expect("snapshot serializes"));
    out
}

pub fn decode_state(bytes: &[u8], path: &Path) -> Result<TrainerSnapshot> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::parse(path, "not a refsplat state file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != STATE_VERSION {
        return Err(Error::parse(path, format!("state version {version} is not supported (expected {STATE_VERSION})")));
    }
    bincode::deserialize(&bytes[12..]).map_err(|e| Error::parse(path, format!("corrupt state: {e}")))
}

/// Writes `cloud.ply` and `state.bin` into `dir` (created if needed).
pub fn save(dir: &Path, cloud: &GaussianCloud, snap: &TrainerSnapshot) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ply::export_ply(cloud, &dir.join(CLOUD_FILE))?;
    let path = dir.join(STATE_FILE);
    fs::write(&path, encode_state(snap)).map_err(|e| Error::io(&path, e))
}

pub fn load(dir: &Path) -> Result<(GaussianCloud, TrainerSnapshot)> {
    let cloud = ply::import_ply(&dir.join(CLOUD_FILE))?;
    let path = dir.join(STATE_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok((cloud, decode_state(&bytes, &path)?))
}

/// Accepts a checkpoint directory or a bare PLY file.
pub fn load_cloud(path: &Path) -> Result<GaussianCloud> {
    if path.is_dir() {
        ply::import_ply(&path.join(CLOUD_FILE))
    } else {
        ply::import_ply(path)
    }
}

pub fn iteration_dir(root: &Path, iteration: usize) -> PathBuf {
    root.join("checkpoints").join(format!("iter_{iteration:06}"))
}
