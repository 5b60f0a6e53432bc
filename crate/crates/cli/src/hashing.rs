use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    /// Hash of `path`, recorded relative to `base` when it lies underneath.
    pub fn of(path: &Path, base: Option<&Path>) -> Result<Self, CliError> {
        let shown = base.and_then(|b| path.strip_prefix(b).ok()).unwrap_or(path).to_string_lossy().replace('\\', "/");
        Ok(Self { path: shown, sha256: sha256_file(path)? })
    }
}
