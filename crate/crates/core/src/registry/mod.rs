//! The four on-chain registries and the transaction calls that drive them.
//!
//! [`ChainState`] is the ledger's state machine. Every registry operation
//! checks all of its preconditions before touching state, so a revert never
//! leaves a partial write behind.

pub mod agreement;
pub mod certificate;
pub mod did;
pub mod multimedia;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{sha256, Address, Hash32, Signature};
use crate::ledger::{Revert, StateMachine, Target};

pub use agreement::{agreement_signing_payload, Agreement, AgreementRegistry, AgreementTerms};
pub use certificate::{AccessCertificate, CertificateIssue, CertificateRegistry};
pub use did::{platform_did, DidDocument, DidRecord, DidRegistry};
pub use multimedia::{upload_ref, MediaRegistration, MultimediaRecord, MultimediaRegistry};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("already-registered")]
    AlreadyRegistered,
    #[error("malformed-ddo: {0}")]
    MalformedDdo(String),
    #[error("not-found")]
    NotFound,
    #[error("revoked")]
    Revoked,
    #[error("only-owner")]
    NotOwner,
    #[error("only-provider")]
    NotProvider,
    #[error("unknown-did: {0}")]
    UnknownDid(String),
    #[error("owner-account-mismatch")]
    OwnerAccountMismatch,
    #[error("already-settled")]
    AlreadySettled,
    #[error("double-sign")]
    DoubleSign,
    #[error("bad-signature")]
    BadSignature,
    #[error("bad-copyrights")]
    BadCopyrights,
    #[error("bad-owner-signature")]
    BadOwnerSignature,
    #[error("bad-upload-ref")]
    BadUploadRef,
    #[error("already-approved")]
    AlreadyApproved,
    #[error("agreement-not-settled")]
    AgreementNotSettled,
    #[error("party-mismatch")]
    PartyMismatch,
    #[error("not-approved")]
    NotApproved,
    #[error("unknown-certificate")]
    UnknownCertificate,
    #[error("already-logged")]
    AlreadyLogged,
    #[error("already-issued")]
    AlreadyIssued,
    #[error("empty-rights")]
    EmptyRights,
    #[error("bad-valid-time")]
    BadValidTime,
    #[error("cert-id-mismatch")]
    CertIdMismatch,
    #[error("bad-payload: {0}")]
    BadPayload(String),
    #[error("unknown-target: {0}")]
    UnknownTarget(String),
}

impl RegistryError {
    /// Stable revert reason recorded on chain.
    pub fn code(&self) -> &'static str {
        use RegistryError::*;
        match self {
            AlreadyRegistered => "already-registered",
            MalformedDdo(_) => "malformed-ddo",
            NotFound => "not-found",
            Revoked => "revoked",
            NotOwner => "only-owner",
            NotProvider => "only-provider",
            UnknownDid(_) => "unknown-did",
            OwnerAccountMismatch => "owner-account-mismatch",
            AlreadySettled => "already-settled",
            DoubleSign => "double-sign",
            BadSignature => "bad-signature",
            BadCopyrights => "bad-copyrights",
            BadOwnerSignature => "bad-owner-signature",
            BadUploadRef => "bad-upload-ref",
            AlreadyApproved => "already-approved",
            AgreementNotSettled => "agreement-not-settled",
            PartyMismatch => "party-mismatch",
            NotApproved => "not-approved",
            UnknownCertificate => "unknown-certificate",
            AlreadyLogged => "already-logged",
            AlreadyIssued => "already-issued",
            EmptyRights => "empty-rights",
            BadValidTime => "bad-valid-time",
            CertIdMismatch => "cert-id-mismatch",
            BadPayload(_) => "bad-payload",
            UnknownTarget(_) => "unknown-target",
        }
    }
}

pub const DID_REGISTRY: &str = "did";
pub const AGREEMENT_REGISTRY: &str = "agreement";
pub const MULTIMEDIA_REGISTRY: &str = "multimedia";
pub const CERTIFICATE_REGISTRY: &str = "certificate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidRegisterArgs {
    pub bound_account: Address,
    pub did: String,
    pub ddo: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidUpdateArgs {
    pub did: String,
    pub ddo: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidRevokeArgs {
    pub did: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementSignArgs {
    pub id: String,
    pub sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaApproveArgs {
    pub id: String,
    pub provider_did: String,
    pub agreement_hash: Hash32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaIdArgs {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogAccessArgs {
    pub id: String,
    pub cert_id: Hash32,
}

/// A registry operation together with its arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Call {
    DidRegister(DidRegisterArgs),
    DidUpdate(DidUpdateArgs),
    DidRevoke(DidRevokeArgs),
    AgreementGenerate(AgreementTerms),
    AgreementOwnerSign(AgreementSignArgs),
    AgreementProviderSign(AgreementSignArgs),
    MediaRegister(MediaRegistration),
    MediaApprove(MediaApproveArgs),
    MediaDeregister(MediaIdArgs),
    MediaLogAccess(LogAccessArgs),
    IssueCert(CertificateIssue),
}

fn decode<T: DeserializeOwned>(payload: &[u8]) -> Result<T, RegistryError> {
    serde_json::from_slice(payload).map_err(|e| RegistryError::BadPayload(e.to_string()))
}

impl Call {
    pub fn target(&self) -> Target {
        let (registry, operation) = match self {
            Call::DidRegister(_) => (DID_REGISTRY, "register"),
            Call::DidUpdate(_) => (DID_REGISTRY, "update_ddo"),
            Call::DidRevoke(_) => (DID_REGISTRY, "revoke"),
            Call::AgreementGenerate(_) => (AGREEMENT_REGISTRY, "generate"),
            Call::AgreementOwnerSign(_) => (AGREEMENT_REGISTRY, "owner_sign"),
            Call::AgreementProviderSign(_) => (AGREEMENT_REGISTRY, "provider_sign"),
            Call::MediaRegister(_) => (MULTIMEDIA_REGISTRY, "register"),
            Call::MediaApprove(_) => (MULTIMEDIA_REGISTRY, "approve"),
            Call::MediaDeregister(_) => (MULTIMEDIA_REGISTRY, "deregister"),
            Call::MediaLogAccess(_) => (MULTIMEDIA_REGISTRY, "log_access"),
            Call::IssueCert(_) => (CERTIFICATE_REGISTRY, "issue_cert"),
        };
        Target::new(registry, operation)
    }

    /// Canonical JSON encoding of the arguments.
    pub fn payload(&self) -> Vec<u8> {
        let encoded = match self {
            Call::DidRegister(a) => serde_json::to_vec(a),
            Call::DidUpdate(a) => serde_json::to_vec(a),
            Call::DidRevoke(a) => serde_json::to_vec(a),
            Call::AgreementGenerate(a) => serde_json::to_vec(a),
            Call::AgreementOwnerSign(a) | Call::AgreementProviderSign(a) => serde_json::to_vec(a),
            Call::MediaRegister(a) => serde_json::to_vec(a),
            Call::MediaApprove(a) => serde_json::to_vec(a),
            Call::MediaDeregister(a) => serde_json::to_vec(a),
            Call::MediaLogAccess(a) => serde_json::to_vec(a),
            Call::IssueCert(a) => serde_json::to_vec(a),
        };
        encoded.expect("call arguments always serialize")
    }

    pub fn decode(target: &Target, payload: &[u8]) -> Result<Call, RegistryError> {
        Ok(match (target.registry.as_str(), target.operation.as_str()) {
            (DID_REGISTRY, "register") => Call::DidRegister(decode(payload)?),
            (DID_REGISTRY, "update_ddo") => Call::DidUpdate(decode(payload)?),
            (DID_REGISTRY, "revoke") => Call::DidRevoke(decode(payload)?),
            (AGREEMENT_REGISTRY, "generate") => Call::AgreementGenerate(decode(payload)?),
            (AGREEMENT_REGISTRY, "owner_sign") => Call::AgreementOwnerSign(decode(payload)?),
            (AGREEMENT_REGISTRY, "provider_sign") => Call::AgreementProviderSign(decode(payload)?),
            (MULTIMEDIA_REGISTRY, "register") => Call::MediaRegister(decode(payload)?),
            (MULTIMEDIA_REGISTRY, "approve") => Call::MediaApprove(decode(payload)?),
            (MULTIMEDIA_REGISTRY, "deregister") => Call::MediaDeregister(decode(payload)?),
            (MULTIMEDIA_REGISTRY, "log_access") => Call::MediaLogAccess(decode(payload)?),
            (CERTIFICATE_REGISTRY, "issue_cert") => Call::IssueCert(decode(payload)?),
            _ => return Err(RegistryError::UnknownTarget(target.to_string())),
        })
    }

    /// Primary key the call operates on (DID, agreement id, media id or cert id).
    pub fn subject(&self) -> String {
        match self {
            Call::DidRegister(a) => a.did.clone(),
            Call::DidUpdate(a) => a.did.clone(),
            Call::DidRevoke(a) => a.did.clone(),
            Call::AgreementGenerate(a) => a.id.clone(),
            Call::AgreementOwnerSign(a) | Call::AgreementProviderSign(a) => a.id.clone(),
            Call::MediaRegister(a) => a.id.clone(),
            Call::MediaApprove(a) => a.id.clone(),
            Call::MediaDeregister(a) => a.id.clone(),
            Call::MediaLogAccess(a) => a.id.clone(),
            Call::IssueCert(a) => a.cert_id.to_hex(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("unknown-registry: {0}")]
    UnknownRegistry(String),
    #[error("not-found")]
    NotFound,
}

/// All registry state. Serialization is key-sorted and hashes to the state root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub dids: DidRegistry,
    pub agreements: AgreementRegistry,
    pub multimedia: MultimediaRegistry,
    pub certificates: CertificateRegistry,
}

impl ChainState {
    pub fn execute(&mut self, caller: Address, call: Call) -> Result<(), RegistryError> {
        match call {
            Call::DidRegister(a) => self.dids.register(caller, a.bound_account, &a.did, &a.ddo),
            Call::DidUpdate(a) => self.dids.update_ddo(caller, &a.did, &a.ddo),
            Call::DidRevoke(a) => self.dids.revoke(caller, &a.did),
            Call::AgreementGenerate(terms) => self.agreements.generate(&self.dids, caller, terms),
            Call::AgreementOwnerSign(a) => self.agreements.owner_sign(&self.dids, caller, &a.id, a.sig),
            Call::AgreementProviderSign(a) => {
                self.agreements.provider_sign(&self.dids, caller, &a.id, a.sig)
            }
            Call::MediaRegister(reg) => self.multimedia.register(&self.dids, caller, reg),
            Call::MediaApprove(a) => self.multimedia.approve(
                &self.dids,
                &self.agreements,
                caller,
                &a.id,
                &a.provider_did,
                a.agreement_hash,
            ),
            Call::MediaDeregister(a) => self.multimedia.deregister(caller, &a.id),
            Call::MediaLogAccess(a) => self.log_access(caller, &a.id, a.cert_id),
            Call::IssueCert(req) => {
                self.certificates
                    .issue(&self.dids, &mut self.multimedia, caller, req)
            }
        }
    }

    /// Standalone access logging. Only certificates issued for this work and
    /// not yet logged are accepted, so the log always mirrors issuance.
    fn log_access(&mut self, caller: Address, id: &str, cert_id: Hash32) -> Result<(), RegistryError> {
        let record = self.multimedia.check_provider(caller, id)?;
        match self.certificates.get(&cert_id) {
            Ok(cert) if cert.info.multimedia_id == id => {}
            _ => return Err(RegistryError::UnknownCertificate),
        }
        if record.access_info.contains(&cert_id) {
            return Err(RegistryError::AlreadyLogged);
        }
        self.multimedia.push_access(id, cert_id);
        Ok(())
    }

    /// Generic read path: `registry` is one of `did`, `agreement`,
    /// `multimedia`, `certificate`; `key` is the record's primary key.
    pub fn query(&self, registry: &str, key: &str) -> Result<serde_json::Value, QueryError> {
        let value = match registry {
            DID_REGISTRY => self.dids.record(key).map(serde_json::to_value),
            AGREEMENT_REGISTRY => self.agreements.get(key).ok().map(serde_json::to_value),
            MULTIMEDIA_REGISTRY => self.multimedia.get(key).ok().map(serde_json::to_value),
            CERTIFICATE_REGISTRY => key
                .parse::<Hash32>()
                .ok()
                .and_then(|id| self.certificates.get(&id).ok())
                .map(serde_json::to_value),
            other => return Err(QueryError::UnknownRegistry(other.to_string())),
        };
        value
            .ok_or(QueryError::NotFound)?
            .map_err(|_| QueryError::NotFound)
    }
}

impl StateMachine for ChainState {
    fn apply(&mut self, sender: &Address, target: &Target, payload: &[u8]) -> Result<(), Revert> {
        Call::decode(target, payload)
            .and_then(|call| self.execute(*sender, call))
            .map_err(|e| Revert(e.code().to_string()))
    }

    fn state_root(&self) -> Hash32 {
        sha256(&serde_json::to_vec(self).expect("state always serializes"))
    }
}
