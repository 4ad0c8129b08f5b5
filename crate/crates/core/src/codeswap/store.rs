use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::SystemTime;

use thiserror::Error;

use super::{CustomModule, Target};
use crate::wire::is_valid_user_id;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no {target} custom code deployed for user {user_id}")]
    NotDeployed { user_id: String, target: Target },
    #[error("invalid user id {0:?}")]
    InvalidUser(String),
    #[error("code store I/O: {0}")]
    Io(#[from] io::Error),
}

/// One slot per `(user_id, target)`. Replacing a slot is atomic and discards
/// the previous module; there is no history.
#[derive(Debug)]
pub struct CodeStore {
    backend: Backend,
}

#[derive(Debug)]
enum Backend {
    Memory(RwLock<HashMap<(String, Target), Arc<CustomModule>>>),
    /// `<dir>/<user_id>.<target>.script`, replaced by write-then-rename.
    Directory { dir: PathBuf, tmp_seq: AtomicU64 },
}

impl CodeStore {
    pub fn in_memory() -> Self {
        Self {
            backend: Backend::Memory(RwLock::new(HashMap::new())),
        }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            backend: Backend::Directory {
                dir,
                tmp_seq: AtomicU64::new(0),
            },
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        match &self.backend {
            Backend::Directory { dir, .. } => Some(dir),
            Backend::Memory(_) => None,
        }
    }

    pub fn file_name(user_id: &str, target: Target) -> String {
        format!("{user_id}.{target}.script")
    }

    pub fn store_module(&self, module: CustomModule) -> Result<(), StoreError> {
        if !is_valid_user_id(&module.user_id) {
            return Err(StoreError::InvalidUser(module.user_id));
        }
        match &self.backend {
            Backend::Memory(slots) => {
                let key = (module.user_id.clone(), module.target);
                slots
                    .write()
                    .expect("code store lock poisoned")
                    .insert(key, Arc::new(module));
            }
            Backend::Directory { dir, tmp_seq } => {
                let final_path = dir.join(Self::file_name(&module.user_id, module.target));
                let seq = tmp_seq.fetch_add(1, Ordering::Relaxed);
                let tmp_path = dir.join(format!(
                    ".{}.{}.tmp-{}-{seq}",
                    module.user_id,
                    module.target,
                    std::process::id()
                ));
                let write = || -> io::Result<()> {
                    let mut f = fs::File::create(&tmp_path)?;
                    f.write_all(module.source.as_bytes())?;
                    f.sync_all()?;
                    fs::rename(&tmp_path, &final_path)
                };
                if let Err(e) = write() {
                    let _ = fs::remove_file(&tmp_path);
                    return Err(e.into());
                }
            }
        }
        Ok(())
    }

    /// Reads the slot afresh on every call.
    pub fn load_module(&self, user_id: &str, target: Target) -> Result<Arc<CustomModule>, StoreError> {
        let not_deployed = || StoreError::NotDeployed {
            user_id: user_id.to_owned(),
            target,
        };
        match &self.backend {
            Backend::Memory(slots) => slots
                .read()
                .expect("code store lock poisoned")
                .get(&(user_id.to_owned(), target))
                .cloned()
                .ok_or_else(not_deployed),
            Backend::Directory { dir, .. } => {
                if !is_valid_user_id(user_id) {
                    return Err(StoreError::InvalidUser(user_id.to_owned()));
                }
                let path = dir.join(Self::file_name(user_id, target));
                let file = match fs::File::open(&path) {
                    Ok(f) => f,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(not_deployed()),
                    Err(e) => return Err(e.into()),
                };
                let deployed_at = file
                    .metadata()
                    .and_then(|m| m.modified())
                    .unwrap_or(SystemTime::UNIX_EPOCH);
                let source = io::read_to_string(file)?;
                let mut module = CustomModule::new(source, user_id, target);
                module.deployed_at = deployed_at;
                Ok(Arc::new(module))
            }
        }
    }
}
