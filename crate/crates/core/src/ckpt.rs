//! Checkpoint container: 4-byte magic `STCK`, u32 LE format version,
//! length-prefixed JSON architecture descriptor, then parameters as
//! little-endian f32 in flat order. Run metadata lives in a JSON sidecar
//! at `<path>.meta.json`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"STCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub epoch: f64,
    pub eval_loss: f64,
    pub config_hash: String,
}

impl CheckpointMeta {
    pub fn new(config_hash: impl Into<String>) -> CheckpointMeta {
        CheckpointMeta {
            step: 0,
            epoch: 0.0,
            eval_loss: f64::NAN,
            config_hash: config_hash.into(),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn save(
    path: &Path,
    arch_json: &str,
    values: &[f64],
    meta: &CheckpointMeta,
) -> Result<(), CkptError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let arch_bytes = arch_json.as_bytes();
    file.write_all(&(arch_bytes.len() as u32).to_le_bytes())?;
    file.write_all(arch_bytes)?;
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    file.write_all(&buf)?;
    let sidecar = std::fs::File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(sidecar, meta)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(String, Vec<f64>, CheckpointMeta), CkptError> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CkptError::BadMagic);
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(CkptError::BadVersion(version));
    }
    file.read_exact(&mut word)?;
    let arch_len = u32::from_le_bytes(word) as usize;
    let mut arch_bytes = vec![0u8; arch_len];
    file.read_exact(&mut arch_bytes)?;
    let arch_json =
        String::from_utf8(arch_bytes).map_err(|e| CkptError::Corrupt(e.to_string()))?;
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    if rest.len() % 4 != 0 {
        return Err(CkptError::Corrupt("parameter payload truncated".into()));
    }
    let values = rest
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let meta_file = std::fs::File::open(sidecar_path(path))?;
    let meta: CheckpointMeta = serde_json::from_reader(meta_file)?;
    Ok((arch_json, values, meta))
}
