//! Access certificate registry. Certificates are immutable once issued.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::did::DidRegistry;
use super::multimedia::MultimediaRegistry;
use super::RegistryError;
use crate::access::{OnchainInfo, ValidTime};
use crate::crypto::{Address, Hash32, Signature};
use crate::rights::AccessRights;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCertificate {
    pub cert_id: Hash32,
    pub info: OnchainInfo,
    pub provider_sig: Signature,
    /// Content hash of the work at issuance; the message of `info.owner_sig`.
    pub content_hash: Hash32,
    pub issued_by: Address,
    pub issued: bool,
}

/// Arguments of `issue_cert`, minus the caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateIssue {
    pub cert_id: Hash32,
    pub multimedia_id: String,
    pub provider_did: String,
    pub enduser_did: String,
    pub owner_sig: Signature,
    pub access_rights: AccessRights,
    pub valid_time: ValidTime,
    pub provider_sig: Signature,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateRegistry {
    certificates: BTreeMap<Hash32, AccessCertificate>,
}

impl CertificateRegistry {
    /// Stores the certificate and appends its id to the work's access log
    /// in the same step.
    pub fn issue(
        &mut self,
        dids: &DidRegistry,
        media: &mut MultimediaRegistry,
        caller: Address,
        req: CertificateIssue,
    ) -> Result<(), RegistryError> {
        if self.certificates.contains_key(&req.cert_id) {
            return Err(RegistryError::AlreadyIssued);
        }
        let record = media.check_provider(caller, &req.multimedia_id)?;
        if record.provider_did.as_deref() != Some(req.provider_did.as_str()) || record.owner_sig != req.owner_sig {
            return Err(RegistryError::PartyMismatch);
        }
        dids.resolve(&req.enduser_did)
            .map_err(|_| RegistryError::UnknownDid(req.enduser_did.clone()))?;
        if req.access_rights.is_empty() {
            return Err(RegistryError::EmptyRights);
        }
        if !req.valid_time.is_well_formed() {
            return Err(RegistryError::BadValidTime);
        }
        let info = OnchainInfo {
            owner_did: record.owner_did.clone(),
            provider_did: req.provider_did,
            enduser_did: req.enduser_did,
            multimedia_id: req.multimedia_id,
            access_rights: req.access_rights,
            valid_time: req.valid_time,
            owner_sig: req.owner_sig,
        };
        if info.cert_id() != req.cert_id {
            return Err(RegistryError::CertIdMismatch);
        }
        let key = dids.signing_key(&info.provider_did)?;
        if !key.verify(&info.canonical_bytes(), &req.provider_sig) {
            return Err(RegistryError::BadSignature);
        }

        let content_hash = record.content_hash;
        media.push_access(&info.multimedia_id, req.cert_id);
        self.certificates.insert(
            req.cert_id,
            AccessCertificate {
                cert_id: req.cert_id,
                info,
                provider_sig: req.provider_sig,
                content_hash,
                issued_by: caller,
                issued: true,
            },
        );
        Ok(())
    }

    pub fn get(&self, cert_id: &Hash32) -> Result<&AccessCertificate, RegistryError> {
        self.certificates.get(cert_id).ok_or(RegistryError::NotFound)
    }

    pub fn certificates(&self) -> impl Iterator<Item = &AccessCertificate> {
        self.certificates.values()
    }

    pub fn len(&self) -> usize {
        self.certificates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.certificates.is_empty()
    }
}
