//! Content-addressed off-chain blob store.
//!
//! On-disk layout under the store root:
//!
//! ```text
//! blobs/<h0h1>/<h2h3>/<hex hash>        raw bytes
//! blobs/<h0h1>/<h2h3>/<hex hash>.kind   media kind label
//! tmp/                                  staging area for atomic writes
//! ```
//!
//! Blobs are written to `tmp/` and renamed into place, so readers never see
//! a partially written blob.

use std::fmt;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{sha256, Hash32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MediaKind {
    MultimediaSource,
    AgreementDocument,
    TokenCopy,
}

impl MediaKind {
    pub fn label(self) -> &'static str {
        match self {
            MediaKind::MultimediaSource => "multimedia-source",
            MediaKind::AgreementDocument => "agreement-document",
            MediaKind::TokenCopy => "token-copy",
        }
    }
}

impl fmt::Display for MediaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MediaKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            MediaKind::MultimediaSource,
            MediaKind::AgreementDocument,
            MediaKind::TokenCopy,
        ]
        .into_iter()
        .find(|k| k.label() == s)
        .ok_or_else(|| StoreError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("empty blob")]
    Empty,
    #[error("storage-full: {needed} bytes requested, {available} available")]
    StorageFull { needed: u64, available: u64 },
    #[error("not-found: {0}")]
    NotFound(Hash32),
    #[error("unknown media kind {0:?}")]
    UnknownKind(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct BlobStore {
    root: PathBuf,
    quota: Option<u64>,
    used: AtomicU64,
}

impl BlobStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Self::with_quota(root, None)
    }

    /// Store refusing writes once `quota` bytes of blob data are held.
    pub fn with_quota(root: impl Into<PathBuf>, quota: Option<u64>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("blobs"))?;
        fs::create_dir_all(root.join("tmp"))?;
        let used = disk_usage(&root.join("blobs"))?;
        Ok(BlobStore {
            root,
            quota,
            used: AtomicU64::new(used),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, hash: &Hash32) -> PathBuf {
        let hex = hash.to_hex();
        self.root
            .join("blobs")
            .join(&hex[0..2])
            .join(&hex[2..4])
            .join(hex)
    }

    fn kind_path(&self, hash: &Hash32) -> PathBuf {
        self.path_of(hash).with_extension("kind")
    }

    /// Stores `bytes` and returns their hash. Storing identical bytes again
    /// is a no-op.
    pub fn put(&self, bytes: &[u8], kind: MediaKind) -> Result<Hash32, StoreError> {
        if bytes.is_empty() {
            return Err(StoreError::Empty);
        }
        let hash = sha256(bytes);
        let path = self.path_of(&hash);
        if path.exists() {
            return Ok(hash);
        }
        let needed = bytes.len() as u64;
        if let Some(quota) = self.quota {
            let used = self.used.load(Ordering::Acquire);
            if used + needed > quota {
                return Err(StoreError::StorageFull {
                    needed,
                    available: quota.saturating_sub(used),
                });
            }
        }
        fs::create_dir_all(path.parent().expect("blob paths have parents"))?;
        self.write_atomic(&self.kind_path(&hash), kind.label().as_bytes())?;
        self.write_atomic(&path, bytes)?;
        self.used.fetch_add(needed, Ordering::AcqRel);
        Ok(hash)
    }

    fn write_atomic(&self, dest: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let staging = self
            .root
            .join("tmp")
            .join(format!("{:016x}", rand::random::<u64>()));
        let mut file = fs::File::create(&staging)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        drop(file);
        fs::rename(&staging, dest)?;
        Ok(())
    }

    /// Raw stored bytes. Integrity is the caller's check; see
    /// [`get_verified`](Self::get_verified).
    pub fn get(&self, hash: &Hash32) -> Result<Vec<u8>, StoreError> {
        fs::read(self.path_of(hash)).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StoreError::NotFound(*hash),
            _ => StoreError::Io(e),
        })
    }

    /// Bytes only if they still hash to `hash`.
    pub fn get_verified(&self, hash: &Hash32) -> Result<Option<Vec<u8>>, StoreError> {
        let bytes = self.get(hash)?;
        Ok((sha256(&bytes) == *hash).then_some(bytes))
    }

    pub fn kind(&self, hash: &Hash32) -> Result<MediaKind, StoreError> {
        let label = fs::read_to_string(self.kind_path(hash)).map_err(|e| match e.kind() {
            ErrorKind::NotFound => StoreError::NotFound(*hash),
            _ => StoreError::Io(e),
        })?;
        label.parse()
    }

    pub fn contains(&self, hash: &Hash32) -> bool {
        self.path_of(hash).exists()
    }

    pub fn delete(&self, hash: &Hash32) -> Result<(), StoreError> {
        let path = self.path_of(hash);
        let len = match fs::metadata(&path) {
            Ok(meta) => meta.len(),
            Err(e) if e.kind() == ErrorKind::NotFound => return Err(StoreError::NotFound(*hash)),
            Err(e) => return Err(e.into()),
        };
        fs::remove_file(&path)?;
        let _ = fs::remove_file(self.kind_path(hash));
        self.used.fetch_sub(len, Ordering::AcqRel);
        Ok(())
    }

    pub fn used_bytes(&self) -> u64 {
        self.used.load(Ordering::Acquire)
    }
}

fn disk_usage(dir: &Path) -> std::io::Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let meta = entry.metadata()?;
        if meta.is_dir() {
            total += disk_usage(&entry.path())?;
        } else if entry.path().extension().is_none() {
            total += meta.len();
        }
    }
    Ok(total)
}
