//! Checkpoint files: a short header followed by the network snapshot.
//!
//! Layout: 8-byte magic, agent kind (1 byte), seed (u64 LE), step count
//! (u64 LE), then the snapshot bytes.

use std::path::Path;

use punctlab_core::agents::AgentKind;
use punctlab_core::nn::NetworkParams;

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"PUNCTCK1";
pub const EXTENSION: &str = "ckpt";
const HEADER_LEN: usize = 8 + 1 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub agent: AgentKind,
    pub seed: u64,
    pub step: u64,
    pub params: NetworkParams,
}

fn kind_code(kind: AgentKind) -> u8 {
    match kind {
        AgentKind::Eg => 0,
        AgentKind::Vb => 1,
        AgentKind::Me => 2,
    }
}

impl CheckpointFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let snapshot = self.params.to_bytes();
        let mut out = Vec::with_capacity(HEADER_LEN + snapshot.len());
        out.extend_from_slice(MAGIC);
        out.push(kind_code(self.agent));
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&snapshot);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let agent = match bytes[8] {
            0 => AgentKind::Eg,
            1 => AgentKind::Vb,
            2 => AgentKind::Me,
            k => return Err(format!("unknown agent code {k}")),
        };
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let params = NetworkParams::from_bytes(&bytes[HEADER_LEN..]).map_err(|e| e.to_string())?;
        Ok(Self {
            agent,
            seed: word(9),
            step: word(17),
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| LabError::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Checkpoint files directly inside `dir`, sorted by file name.
pub fn list(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| LabError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == EXTENSION) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}
