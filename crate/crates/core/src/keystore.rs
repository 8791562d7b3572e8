//! Local key files, one per identity.
//!
//! Each identity lives in `<dir>/<name>.json`:
//!
//! ```text
//! {"address":"<40 hex>","did":"did:mdm:<address>","name":"<name>",
//!  "public_key":"<64 hex>","secret_key":"<64 hex>","version":1}
//! ```
//!
//! Keys are written in sorted order with no whitespace, followed by a single
//! newline. On load the address, public key and DID must all derive from the
//! secret key.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Address, Keypair, PublicKey};
use crate::registry::platform_did;

pub const KEYSTORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KeystoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("identity {0:?} already exists")]
    Exists(String),
    #[error("unknown identity {0:?}")]
    Unknown(String),
    #[error("invalid identity name {0:?}")]
    BadName(String),
    #[error("malformed key file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

impl KeystoreError {
    pub fn code(&self) -> &'static str {
        match self {
            KeystoreError::Io(_) => "keystore-io",
            KeystoreError::Exists(_) => "identity-exists",
            KeystoreError::Unknown(_) => "unknown-identity",
            KeystoreError::BadName(_) => "bad-identity-name",
            KeystoreError::Malformed { .. } => "malformed-key-file",
        }
    }
}

/// Field order is alphabetical so that serde output is canonical.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyFile {
    address: Address,
    did: String,
    name: String,
    public_key: PublicKey,
    secret_key: String,
    version: u32,
}

/// A loaded identity: key pair plus the platform DID bound to its account.
#[derive(Debug, Clone)]
pub struct Identity {
    pub name: String,
    pub keys: Keypair,
    pub did: String,
}

impl Identity {
    pub fn new(name: impl Into<String>, keys: Keypair) -> Self {
        let did = platform_did(&keys.address());
        Identity {
            name: name.into(),
            keys,
            did,
        }
    }

    pub fn address(&self) -> Address {
        self.keys.address()
    }

    pub fn to_file_text(&self) -> String {
        let file = KeyFile {
            address: self.keys.address(),
            did: self.did.clone(),
            name: self.name.clone(),
            public_key: self.keys.public_key(),
            secret_key: hex::encode(self.keys.secret_bytes()),
            version: KEYSTORE_VERSION,
        };
        let mut text = serde_json::to_string(&file).expect("key file serializes");
        text.push('\n');
        text
    }

    pub fn from_file_text(path: &Path, text: &str) -> Result<Self, KeystoreError> {
        let bad = |reason: String| KeystoreError::Malformed {
            path: path.to_path_buf(),
            reason,
        };
        let file: KeyFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.version != KEYSTORE_VERSION {
            return Err(bad(format!("unsupported version {}", file.version)));
        }
        let secret: [u8; 32] = hex::decode(&file.secret_key)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| bad("secret_key must be 64 hex digits".into()))?;
        let identity = Identity::new(file.name, Keypair::from_secret(secret));
        if identity.keys.public_key() != file.public_key
            || identity.address() != file.address
            || identity.did != file.did
        {
            return Err(bad("public fields do not derive from the secret key".into()));
        }
        Ok(identity)
    }
}

/// Directory of key files.
#[derive(Debug, Clone)]
pub struct Keystore {
    dir: PathBuf,
}

impl Keystore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Keystore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, name: &str) -> Result<PathBuf, KeystoreError> {
        let ok = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !name.starts_with('.');
        if !ok {
            return Err(KeystoreError::BadName(name.to_string()));
        }
        Ok(self.dir.join(format!("{name}.json")))
    }

    /// Creates a new identity file; refuses to overwrite an existing one.
    pub fn create(&self, name: &str, keys: Keypair) -> Result<Identity, KeystoreError> {
        let path = self.path_of(name)?;
        fs::create_dir_all(&self.dir)?;
        let identity = Identity::new(name, keys);
        let mut file = match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(KeystoreError::Exists(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        restrict_permissions(&file)?;
        file.write_all(identity.to_file_text().as_bytes())?;
        file.sync_all()?;
        Ok(identity)
    }

    pub fn load(&self, name: &str) -> Result<Identity, KeystoreError> {
        let path = self.path_of(name)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(KeystoreError::Unknown(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        Identity::from_file_text(&path, &text)
    }

    /// Loads a key file by path rather than by name.
    pub fn load_path(path: &Path) -> Result<Identity, KeystoreError> {
        let text = fs::read_to_string(path)?;
        Identity::from_file_text(path, &text)
    }

    pub fn names(&self) -> Result<Vec<String>, KeystoreError> {
        let mut names = Vec::new();
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(names),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }
}

#[cfg(unix)]
fn restrict_permissions(file: &fs::File) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    file.set_permissions(fs::Permissions::from_mode(0o600))
}

#[cfg(not(unix))]
fn restrict_permissions(_file: &fs::File) -> std::io::Result<()> {
    Ok(())
}
