//! Two-party copyright licensing agreements.
//!
//! An agreement settles once both the owner and the provider have signed;
//! a settled agreement accepts no further mutation. Signatures are checked
//! against each party's current DID document key when they land.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::did::DidRegistry;
use super::RegistryError;
use crate::crypto::{Address, Canonical, Hash32, Signature};
use crate::rights::AccessRights;

/// Bytes both parties sign.
pub fn agreement_signing_payload(
    id: &str,
    owner_did: &str,
    provider_did: &str,
    agreement_hash: &Hash32,
    valid_time: u64,
    copyrights: &str,
) -> Vec<u8> {
    Canonical::new()
        .field("mdm/agreement/v1")
        .field(id)
        .field(owner_did)
        .field(provider_did)
        .field(agreement_hash.as_bytes())
        .u64(valid_time)
        .field(copyrights)
        .finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub id: String,
    pub owner_did: String,
    pub owner_account: Address,
    pub provider_did: String,
    pub provider_account: Address,
    pub agreement_hash: Hash32,
    /// Validity period in seconds.
    pub valid_time: u64,
    pub copyrights: String,
    pub owner_sig: Option<Signature>,
    pub provider_sig: Option<Signature>,
    pub owner_signed: bool,
    pub provider_signed: bool,
    pub settled: bool,
}

impl Agreement {
    pub fn signing_payload(&self) -> Vec<u8> {
        agreement_signing_payload(
            &self.id,
            &self.owner_did,
            &self.provider_did,
            &self.agreement_hash,
            self.valid_time,
            &self.copyrights,
        )
    }

    pub fn rights(&self) -> AccessRights {
        AccessRights::parse_names(&self.copyrights).unwrap_or_default()
    }
}

/// Arguments of `generate`, minus the caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementTerms {
    pub id: String,
    pub owner_did: String,
    pub owner_account: Address,
    pub provider_did: String,
    pub agreement_hash: Hash32,
    pub valid_time: u64,
    pub copyrights: String,
}

impl AgreementTerms {
    pub fn signing_payload(&self) -> Vec<u8> {
        agreement_signing_payload(
            &self.id,
            &self.owner_did,
            &self.provider_did,
            &self.agreement_hash,
            self.valid_time,
            &self.copyrights,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Party {
    Owner,
    Provider,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementRegistry {
    agreements: BTreeMap<String, Agreement>,
}

impl AgreementRegistry {
    /// Drafts (or redrafts, while unsettled) an agreement. The caller
    /// becomes the provider account.
    pub fn generate(
        &mut self,
        dids: &DidRegistry,
        caller: Address,
        terms: AgreementTerms,
    ) -> Result<(), RegistryError> {
        if self.agreements.get(&terms.id).is_some_and(|a| a.settled) {
            return Err(RegistryError::AlreadySettled);
        }
        for did in [&terms.owner_did, &terms.provider_did] {
            dids.resolve(did)
                .map_err(|_| RegistryError::UnknownDid(did.clone()))?;
        }
        let owner_record = dids.record(&terms.owner_did).expect("resolved above");
        if owner_record.owner != terms.owner_account {
            return Err(RegistryError::OwnerAccountMismatch);
        }
        AccessRights::parse_canonical(&terms.copyrights)
            .ok()
            .filter(|r| !r.is_empty())
            .ok_or(RegistryError::BadCopyrights)?;

        self.agreements.insert(
            terms.id.clone(),
            Agreement {
                id: terms.id,
                owner_did: terms.owner_did,
                owner_account: terms.owner_account,
                provider_did: terms.provider_did,
                provider_account: caller,
                agreement_hash: terms.agreement_hash,
                valid_time: terms.valid_time,
                copyrights: terms.copyrights,
                owner_sig: None,
                provider_sig: None,
                owner_signed: false,
                provider_signed: false,
                settled: false,
            },
        );
        Ok(())
    }

    pub fn owner_sign(
        &mut self,
        dids: &DidRegistry,
        caller: Address,
        id: &str,
        sig: Signature,
    ) -> Result<(), RegistryError> {
        self.sign(dids, caller, id, sig, Party::Owner)
    }

    pub fn provider_sign(
        &mut self,
        dids: &DidRegistry,
        caller: Address,
        id: &str,
        sig: Signature,
    ) -> Result<(), RegistryError> {
        self.sign(dids, caller, id, sig, Party::Provider)
    }

    fn sign(
        &mut self,
        dids: &DidRegistry,
        caller: Address,
        id: &str,
        sig: Signature,
        party: Party,
    ) -> Result<(), RegistryError> {
        let agreement = self.agreements.get_mut(id).ok_or(RegistryError::NotFound)?;
        let (account, did, already) = match party {
            Party::Owner => (agreement.owner_account, &agreement.owner_did, agreement.owner_signed),
            Party::Provider => (
                agreement.provider_account,
                &agreement.provider_did,
                agreement.provider_signed,
            ),
        };
        if caller != account {
            return Err(match party {
                Party::Owner => RegistryError::NotOwner,
                Party::Provider => RegistryError::NotProvider,
            });
        }
        if agreement.settled {
            return Err(RegistryError::AlreadySettled);
        }
        if already {
            return Err(RegistryError::DoubleSign);
        }
        let key = dids.signing_key(did)?;
        if !key.verify(&agreement.signing_payload(), &sig) {
            return Err(RegistryError::BadSignature);
        }

        match party {
            Party::Owner => {
                agreement.owner_sig = Some(sig);
                agreement.owner_signed = true;
            }
            Party::Provider => {
                agreement.provider_sig = Some(sig);
                agreement.provider_signed = true;
            }
        }
        agreement.settled = agreement.owner_signed && agreement.provider_signed;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Agreement, RegistryError> {
        self.agreements.get(id).ok_or(RegistryError::NotFound)
    }

    /// Settled agreements whose file hash equals `hash`.
    pub fn settled_with_hash<'a>(&'a self, hash: &'a Hash32) -> impl Iterator<Item = &'a Agreement> + 'a {
        self.agreements
            .values()
            .filter(move |a| a.settled && &a.agreement_hash == hash)
    }

    pub fn len(&self) -> usize {
        self.agreements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agreements.is_empty()
    }
}
