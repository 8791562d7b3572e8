//! Multimedia works: registration, provider approval, deregistration and
//! the per-work access log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::agreement::AgreementRegistry;
use super::did::DidRegistry;
use super::RegistryError;
use crate::crypto::{Address, Hash32, Signature};

/// Locator scheme for off-chain content.
pub const STORE_SCHEME: &str = "store://";

pub fn upload_ref(content_hash: &Hash32) -> String {
    format!("{STORE_SCHEME}{content_hash}")
}

pub fn parse_upload_ref(locator: &str) -> Option<Hash32> {
    locator.strip_prefix(STORE_SCHEME)?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultimediaRecord {
    pub id: String,
    pub owner_did: String,
    pub owner_account: Address,
    pub content_hash: Hash32,
    /// Owner signature over the raw 32 content-hash bytes.
    pub owner_sig: Signature,
    pub upload_ref: String,
    pub approved: bool,
    pub provider_account: Option<Address>,
    pub provider_did: Option<String>,
    pub agreement_hash: Option<Hash32>,
    pub access_info: Vec<Hash32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaRegistration {
    pub id: String,
    pub owner_did: String,
    pub content_hash: Hash32,
    pub owner_sig: Signature,
    pub upload_ref: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultimediaRegistry {
    records: BTreeMap<String, MultimediaRecord>,
}

impl MultimediaRegistry {
    pub fn register(
        &mut self,
        dids: &DidRegistry,
        caller: Address,
        reg: MediaRegistration,
    ) -> Result<(), RegistryError> {
        if self.records.contains_key(&reg.id) {
            return Err(RegistryError::AlreadyRegistered);
        }
        let key = dids.signing_key(&reg.owner_did)?;
        if dids.record(&reg.owner_did).map(|r| r.owner) != Some(caller) {
            return Err(RegistryError::NotOwner);
        }
        if !key.verify(reg.content_hash.as_bytes(), &reg.owner_sig) {
            return Err(RegistryError::BadOwnerSignature);
        }
        if parse_upload_ref(&reg.upload_ref) != Some(reg.content_hash) {
            return Err(RegistryError::BadUploadRef);
        }
        self.records.insert(
            reg.id.clone(),
            MultimediaRecord {
                id: reg.id,
                owner_did: reg.owner_did,
                owner_account: caller,
                content_hash: reg.content_hash,
                owner_sig: reg.owner_sig,
                upload_ref: reg.upload_ref,
                approved: false,
                provider_account: None,
                provider_did: None,
                agreement_hash: None,
                access_info: Vec::new(),
            },
        );
        Ok(())
    }

    /// Approval cites a settled agreement between this work's owner and the
    /// approving provider, identified by the agreement file hash.
    pub fn approve(
        &mut self,
        dids: &DidRegistry,
        agreements: &AgreementRegistry,
        caller: Address,
        id: &str,
        provider_did: &str,
        agreement_hash: Hash32,
    ) -> Result<(), RegistryError> {
        let record = self.records.get_mut(id).ok_or(RegistryError::NotFound)?;
        if record.approved {
            return Err(RegistryError::AlreadyApproved);
        }
        let mut settled = agreements.settled_with_hash(&agreement_hash).peekable();
        if settled.peek().is_none() {
            return Err(RegistryError::AgreementNotSettled);
        }
        let matches = settled.any(|a| {
            a.owner_did == record.owner_did
                && a.owner_account == record.owner_account
                && a.provider_did == provider_did
                && a.provider_account == caller
        });
        if !matches {
            return Err(RegistryError::PartyMismatch);
        }
        dids.resolve(provider_did)
            .map_err(|_| RegistryError::UnknownDid(provider_did.to_string()))?;

        record.approved = true;
        record.provider_account = Some(caller);
        record.provider_did = Some(provider_did.to_string());
        record.agreement_hash = Some(agreement_hash);
        Ok(())
    }

    /// Deletes the record; the id may be registered again afterwards.
    pub fn deregister(&mut self, caller: Address, id: &str) -> Result<(), RegistryError> {
        let record = self.records.get(id).ok_or(RegistryError::NotFound)?;
        if record.owner_account != caller {
            return Err(RegistryError::NotOwner);
        }
        self.records.remove(id);
        Ok(())
    }

    /// Provider-only checks shared by `log_access` and certificate issuance.
    pub(crate) fn check_provider(
        &self,
        caller: Address,
        id: &str,
    ) -> Result<&MultimediaRecord, RegistryError> {
        let record = self.records.get(id).ok_or(RegistryError::NotFound)?;
        if !record.approved {
            return Err(RegistryError::NotApproved);
        }
        if record.provider_account != Some(caller) {
            return Err(RegistryError::NotProvider);
        }
        Ok(record)
    }

    /// Appends without checks; callers validate first.
    pub(crate) fn push_access(&mut self, id: &str, cert_id: Hash32) {
        if let Some(record) = self.records.get_mut(id) {
            record.access_info.push(cert_id);
        }
    }

    pub fn get(&self, id: &str) -> Result<&MultimediaRecord, RegistryError> {
        self.records.get(id).ok_or(RegistryError::NotFound)
    }

    pub fn records(&self) -> impl Iterator<Item = &MultimediaRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
