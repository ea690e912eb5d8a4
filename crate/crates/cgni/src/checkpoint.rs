use std::fs;
use std::path::{Path, PathBuf};

use cgni_core::ModelCheckpoint;

use crate::io::write_atomic;
use crate::{Error, Result};

pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    write_atomic(path, &ckpt.encode())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    ModelCheckpoint::decode(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

/// `{prefix}-epoch{epoch}.cgni`.
pub fn checkpoint_path(prefix: &Path, epoch: u32) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(format!("-epoch{epoch}.cgni"));
    PathBuf::from(name)
}
