//! DID documents and the DID registry.
//!
//! Registration is one-shot for the lifetime of the chain: a revoked DID
//! keeps its slot and can never be registered again. Only the registering
//! account may update or revoke.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RegistryError;
use crate::crypto::{Address, PublicKey, SIGNATURE_SCHEME};

pub const DID_CONTEXT: &str = "https://w3id.org/did/v1";

/// Method used for identities minted by this platform.
pub const PLATFORM_METHOD: &str = "mdm";

/// `did:mdm:<hex address>`.
pub fn platform_did(account: &Address) -> String {
    format!("did:{PLATFORM_METHOD}:{account}")
}

/// Checks `did:<method>:<idstring>`.
pub fn is_valid_did(did: &str) -> bool {
    let Some(rest) = did.strip_prefix("did:") else {
        return false;
    };
    let Some((method, id)) = rest.split_once(':') else {
        return false;
    };
    !method.is_empty()
        && method.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
        && !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'_' | b':' | b'%'))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyMaterial {
    #[serde(rename = "publicKeyHex")]
    Hex(String),
    #[serde(rename = "publicKeyPem")]
    Pem(String),
    #[serde(rename = "publicKeyBase58")]
    Base58(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdoPublicKey {
    pub id: String,
    #[serde(rename = "type")]
    pub scheme: String,
    pub controller: String,
    #[serde(flatten)]
    pub material: KeyMaterial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdoService {
    pub id: String,
    #[serde(rename = "type")]
    pub service_type: String,
    #[serde(rename = "serviceEndpoint")]
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidDocument {
    #[serde(rename = "@context")]
    pub context: String,
    pub id: String,
    #[serde(rename = "publicKey")]
    pub public_keys: Vec<DdoPublicKey>,
    #[serde(rename = "service", default)]
    pub services: Vec<DdoService>,
}

impl DidDocument {
    /// Platform document: one Ed25519 key, optionally one contact endpoint.
    pub fn for_key(did: &str, key: &PublicKey, endpoint: Option<&str>) -> Self {
        DidDocument {
            context: DID_CONTEXT.to_string(),
            id: did.to_string(),
            public_keys: vec![DdoPublicKey {
                id: format!("{did}#keys-1"),
                scheme: SIGNATURE_SCHEME.to_string(),
                controller: did.to_string(),
                material: KeyMaterial::Hex(key.to_hex()),
            }],
            services: endpoint
                .map(|url| DdoService {
                    id: format!("{did}#contact"),
                    service_type: "ContactService".to_string(),
                    endpoint: url.to_string(),
                })
                .into_iter()
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let ddo: DidDocument =
            serde_json::from_str(text).map_err(|e| RegistryError::MalformedDdo(e.to_string()))?;
        ddo.validate()?;
        Ok(ddo)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |why: String| Err(RegistryError::MalformedDdo(why));
        if !is_valid_did(&self.id) {
            return bad(format!("invalid DID {:?}", self.id));
        }
        if self.context.is_empty() {
            return bad("empty @context".into());
        }
        if self.public_keys.is_empty() {
            return bad("no public keys".into());
        }
        let fragment_ok = |id: &str| {
            id.strip_prefix(self.id.as_str())
                .and_then(|rest| rest.strip_prefix('#'))
                .is_some_and(|frag| !frag.is_empty())
        };
        for key in &self.public_keys {
            if !fragment_ok(&key.id) {
                return bad(format!("key id {:?} is not {}#<fragment>", key.id, self.id));
            }
            if !is_valid_did(&key.controller) {
                return bad(format!("invalid controller {:?}", key.controller));
            }
        }
        for service in &self.services {
            if !fragment_ok(&service.id) {
                return bad(format!("service id {:?} is not {}#<fragment>", service.id, self.id));
            }
        }
        Ok(())
    }

    /// Key-sorted JSON text.
    pub fn to_canonical(&self) -> String {
        serde_json::to_value(self)
            .and_then(|v| serde_json::to_string(&v))
            .expect("DID documents always serialize")
    }

    /// First Ed25519 key listed in the document.
    pub fn signing_key(&self) -> Option<PublicKey> {
        self.public_keys.iter().find_map(|k| match &k.material {
            KeyMaterial::Hex(hex) if k.scheme == SIGNATURE_SCHEME => hex.parse().ok(),
            _ => None,
        })
    }

    pub fn service_endpoint(&self) -> Option<&str> {
        self.services.first().map(|s| s.endpoint.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidRecord {
    pub owner: Address,
    pub bound_account: Address,
    pub did: String,
    /// Stored verbatim as submitted; `None` once revoked.
    pub ddo: Option<String>,
    pub revoked: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidRegistry {
    records: BTreeMap<String, DidRecord>,
}

impl DidRegistry {
    pub fn register(
        &mut self,
        caller: Address,
        bound_account: Address,
        did: &str,
        ddo: &str,
    ) -> Result<(), RegistryError> {
        if self.records.contains_key(did) {
            return Err(RegistryError::AlreadyRegistered);
        }
        let parsed = DidDocument::parse(ddo)?;
        if parsed.id != did {
            return Err(RegistryError::MalformedDdo(format!(
                "document id {:?} does not match {did:?}",
                parsed.id
            )));
        }
        self.records.insert(
            did.to_string(),
            DidRecord {
                owner: caller,
                bound_account,
                did: did.to_string(),
                ddo: Some(ddo.to_string()),
                revoked: false,
            },
        );
        Ok(())
    }

    fn owned_live(&mut self, caller: Address, did: &str) -> Result<&mut DidRecord, RegistryError> {
        let record = self.records.get_mut(did).ok_or(RegistryError::NotFound)?;
        if record.revoked {
            return Err(RegistryError::Revoked);
        }
        if record.owner != caller {
            return Err(RegistryError::NotOwner);
        }
        Ok(record)
    }

    pub fn update_ddo(&mut self, caller: Address, did: &str, ddo: &str) -> Result<(), RegistryError> {
        let record = self.owned_live(caller, did)?;
        let parsed = DidDocument::parse(ddo)?;
        if parsed.id != did {
            return Err(RegistryError::MalformedDdo("document id does not match".into()));
        }
        record.ddo = Some(ddo.to_string());
        Ok(())
    }

    pub fn revoke(&mut self, caller: Address, did: &str) -> Result<(), RegistryError> {
        let record = self.owned_live(caller, did)?;
        record.ddo = None;
        record.revoked = true;
        Ok(())
    }

    /// Stored document text of a live DID.
    pub fn resolve(&self, did: &str) -> Result<&str, RegistryError> {
        let record = self.records.get(did).ok_or(RegistryError::NotFound)?;
        match &record.ddo {
            Some(ddo) if !record.revoked => Ok(ddo),
            _ => Err(RegistryError::Revoked),
        }
    }

    pub fn resolve_document(&self, did: &str) -> Result<DidDocument, RegistryError> {
        // Stored text was validated on the way in.
        DidDocument::parse(self.resolve(did)?)
    }

    /// Ed25519 key of a live DID, mapped to `UnknownDid` when unavailable.
    pub fn signing_key(&self, did: &str) -> Result<PublicKey, RegistryError> {
        self.resolve_document(did)
            .ok()
            .and_then(|d| d.signing_key())
            .ok_or_else(|| RegistryError::UnknownDid(did.to_string()))
    }

    pub fn record(&self, did: &str) -> Option<&DidRecord> {
        self.records.get(did)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
