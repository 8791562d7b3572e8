//! Access granting: certificate preparation, token verification and content
//! redemption.
//!
//! Generation: the provider looks up the work's owner and owner signature,
//! assembles the [`OnchainInfo`], hashes it into the certificate id, signs
//! it, and hands out an [`AccessToken`] carrying only the certificate id,
//! provider DID, provider signature and validity window. The certificate
//! itself goes on chain through `certificate.issue_cert`.
//!
//! Verification runs six ordered steps against committed state and stops at
//! the first failure:
//!
//! 1. decode the token
//! 2. check `now` lies inside the validity window
//! 3. look the certificate up by id
//! 4. compare the token's provider signature, provider and window with the
//!    on-chain certificate
//! 5. resolve the provider's DID key and verify its signature over the
//!    recombined on-chain info
//! 6. resolve the owner's DID key and verify the owner signature over the
//!    work's content hash

mod info;
mod token;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use info::{OnchainInfo, ValidTime};
pub use token::{AccessToken, TokenError, TOKEN_ALG, TOKEN_VERSION};

use crate::crypto::{sha256, Hash32, Keypair};
use crate::registry::multimedia::parse_upload_ref;
use crate::registry::{CertificateIssue, ChainState};
use crate::rights::AccessRights;
use crate::store::{BlobStore, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRequest {
    pub owner_did: String,
    pub provider_did: String,
    pub enduser_did: String,
    pub multimedia_id: String,
    pub rights: AccessRights,
    pub valid_time: ValidTime,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AccessError {
    #[error("not-found: multimedia {0}")]
    NotFound(String),
    #[error("not-approved")]
    NotApproved,
    #[error("party-mismatch")]
    PartyMismatch,
    #[error("unknown-enduser: {0}")]
    UnknownEnduser(String),
    #[error("empty-rights")]
    EmptyRights,
    #[error("expired-window")]
    ExpiredWindow,
    #[error("provider key does not match the provider DID document")]
    ProviderKeyMismatch,
    #[error("rights not granted: {0}")]
    NotGranted(String),
}

impl AccessError {
    pub fn code(&self) -> &'static str {
        match self {
            AccessError::NotFound(_) => "not-found",
            AccessError::NotApproved => "not-approved",
            AccessError::PartyMismatch => "party-mismatch",
            AccessError::UnknownEnduser(_) => "unknown-enduser",
            AccessError::EmptyRights => "empty-rights",
            AccessError::ExpiredWindow => "expired-window",
            AccessError::ProviderKeyMismatch => "provider-key-mismatch",
            AccessError::NotGranted(_) => "not-granted",
        }
    }
}

/// A signed certificate ready for issuance, and the token that refers to it.
#[derive(Debug, Clone)]
pub struct PreparedCertificate {
    pub info: OnchainInfo,
    pub token: AccessToken,
    pub issue: CertificateIssue,
}

/// Builds and signs a certificate against committed state. Nothing is
/// submitted; issue `prepared.issue` through the ledger afterwards.
pub fn prepare_certificate(
    state: &ChainState,
    provider: &Keypair,
    req: &TokenRequest,
    now: u64,
) -> Result<PreparedCertificate, AccessError> {
    let record = state
        .multimedia
        .get(&req.multimedia_id)
        .map_err(|_| AccessError::NotFound(req.multimedia_id.clone()))?;
    if !record.approved {
        return Err(AccessError::NotApproved);
    }
    if record.owner_did != req.owner_did || record.provider_did.as_deref() != Some(req.provider_did.as_str()) {
        return Err(AccessError::PartyMismatch);
    }
    state
        .dids
        .resolve(&req.enduser_did)
        .map_err(|_| AccessError::UnknownEnduser(req.enduser_did.clone()))?;
    if req.rights.is_empty() {
        return Err(AccessError::EmptyRights);
    }
    if !req.valid_time.is_well_formed() || req.valid_time.not_after <= now {
        return Err(AccessError::ExpiredWindow);
    }
    if state.dids.signing_key(&req.provider_did).ok() != Some(provider.public_key()) {
        return Err(AccessError::ProviderKeyMismatch);
    }

    let info = OnchainInfo {
        owner_did: record.owner_did.clone(),
        provider_did: req.provider_did.clone(),
        enduser_did: req.enduser_did.clone(),
        multimedia_id: req.multimedia_id.clone(),
        access_rights: req.rights,
        valid_time: req.valid_time,
        owner_sig: record.owner_sig,
    };
    let cert_id = info.cert_id();
    let provider_sig = provider.sign(&info.canonical_bytes());
    Ok(PreparedCertificate {
        token: AccessToken {
            cert_id,
            provider_did: info.provider_did.clone(),
            provider_sig,
            valid_time: info.valid_time,
        },
        issue: CertificateIssue {
            cert_id,
            multimedia_id: info.multimedia_id.clone(),
            provider_did: info.provider_did.clone(),
            enduser_did: info.enduser_did.clone(),
            owner_sig: info.owner_sig,
            access_rights: info.access_rights,
            valid_time: info.valid_time,
            provider_sig,
        },
        info,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyStep {
    Decode,
    Temporal,
    Lookup,
    SignatureMatch,
    ProviderSignature,
    OwnerSignature,
}

impl VerifyStep {
    pub const ORDER: [VerifyStep; 6] = [
        VerifyStep::Decode,
        VerifyStep::Temporal,
        VerifyStep::Lookup,
        VerifyStep::SignatureMatch,
        VerifyStep::ProviderSignature,
        VerifyStep::OwnerSignature,
    ];

    /// 1-based position in the verification order.
    pub fn number(self) -> usize {
        self as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: VerifyStep,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_step: Option<VerifyStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cert_id: Option<Hash32>,
    pub steps: Vec<StepResult>,
}

impl VerificationReport {
    pub fn accepted(&self) -> bool {
        self.outcome == Outcome::Accept
    }
}

struct ReportBuilder {
    steps: Vec<StepResult>,
    cert_id: Option<Hash32>,
}

impl ReportBuilder {
    fn pass(&mut self, step: VerifyStep) {
        self.steps.push(StepResult {
            step,
            passed: true,
            detail: None,
        });
    }

    fn fail(mut self, step: VerifyStep, detail: impl Into<String>) -> VerificationReport {
        self.steps.push(StepResult {
            step,
            passed: false,
            detail: Some(detail.into()),
        });
        VerificationReport {
            outcome: Outcome::Reject,
            failed_step: Some(step),
            cert_id: self.cert_id,
            steps: self.steps,
        }
    }
}

/// Verifies an encoded token against committed state at instant `now`.
/// Hostile input is fine; every failure is a report outcome.
pub fn verify_token(state: &ChainState, token: &str, now: u64) -> VerificationReport {
    let mut report = ReportBuilder {
        steps: Vec::with_capacity(6),
        cert_id: None,
    };

    let token = match AccessToken::decode(token.trim()) {
        Ok(t) => t,
        Err(e) => return report.fail(VerifyStep::Decode, e.to_string()),
    };
    report.cert_id = Some(token.cert_id);
    report.pass(VerifyStep::Decode);

    if !token.valid_time.contains(now) {
        return report.fail(
            VerifyStep::Temporal,
            format!(
                "now {now} outside [{}, {})",
                token.valid_time.not_before, token.valid_time.not_after
            ),
        );
    }
    report.pass(VerifyStep::Temporal);

    let Ok(cert) = state.certificates.get(&token.cert_id) else {
        return report.fail(VerifyStep::Lookup, "no certificate with this id");
    };
    report.pass(VerifyStep::Lookup);

    if cert.provider_sig != token.provider_sig {
        return report.fail(VerifyStep::SignatureMatch, "provider signature differs from on-chain copy");
    }
    if cert.info.provider_did != token.provider_did || cert.info.valid_time != token.valid_time {
        return report.fail(VerifyStep::SignatureMatch, "provider or window differs from on-chain copy");
    }
    report.pass(VerifyStep::SignatureMatch);

    let provider_key = match state.dids.signing_key(&cert.info.provider_did) {
        Ok(k) => k,
        Err(_) => return report.fail(VerifyStep::ProviderSignature, "provider DID does not resolve"),
    };
    if cert.info.cert_id() != token.cert_id {
        return report.fail(VerifyStep::ProviderSignature, "recombined info does not hash to the id");
    }
    if !provider_key.verify(&cert.info.canonical_bytes(), &cert.provider_sig) {
        return report.fail(VerifyStep::ProviderSignature, "provider signature invalid");
    }
    report.pass(VerifyStep::ProviderSignature);

    let owner_key = match state.dids.signing_key(&cert.info.owner_did) {
        Ok(k) => k,
        Err(_) => return report.fail(VerifyStep::OwnerSignature, "owner DID does not resolve"),
    };
    if !owner_key.verify(cert.content_hash.as_bytes(), &cert.info.owner_sig) {
        return report.fail(VerifyStep::OwnerSignature, "owner signature invalid");
    }
    report.pass(VerifyStep::OwnerSignature);

    VerificationReport {
        outcome: Outcome::Accept,
        failed_step: None,
        cert_id: report.cert_id,
        steps: report.steps,
    }
}

#[derive(Debug, Error)]
pub enum RedeemError {
    #[error("verification-failed at step {} ({step:?}): {detail}", step.number())]
    VerificationFailed { step: VerifyStep, detail: String },
    #[error("content-missing")]
    ContentMissing,
    #[error("content-integrity: expected {expected}, got {actual}")]
    ContentIntegrity { expected: Hash32, actual: Hash32 },
    #[error("store: {0}")]
    Store(StoreError),
}

impl RedeemError {
    pub fn code(&self) -> &'static str {
        match self {
            RedeemError::VerificationFailed { .. } => "verification-failed",
            RedeemError::ContentMissing => "content-missing",
            RedeemError::ContentIntegrity { .. } => "content-integrity",
            RedeemError::Store(_) => "store",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Redeemed {
    pub multimedia_id: String,
    pub content_hash: Hash32,
    pub bytes: Vec<u8>,
}

/// Verifies the token, then fetches the work's off-chain bytes and checks
/// them against the on-chain content hash.
pub fn redeem(state: &ChainState, store: &BlobStore, token: &str, now: u64) -> Result<Redeemed, RedeemError> {
    let report = verify_token(state, token, now);
    if let Some(step) = report.failed_step {
        let detail = report
            .steps
            .last()
            .and_then(|s| s.detail.clone())
            .unwrap_or_default();
        return Err(RedeemError::VerificationFailed { step, detail });
    }
    let cert_id = report.cert_id.expect("accepted reports carry the id");
    let cert = state.certificates.get(&cert_id).expect("accepted certificate exists");
    let record = state
        .multimedia
        .get(&cert.info.multimedia_id)
        .map_err(|_| RedeemError::ContentMissing)?;
    let locator = parse_upload_ref(&record.upload_ref).ok_or(RedeemError::ContentMissing)?;
    let bytes = match store.get(&locator) {
        Ok(b) => b,
        Err(StoreError::NotFound(_)) => return Err(RedeemError::ContentMissing),
        Err(e) => return Err(RedeemError::Store(e)),
    };
    let actual = sha256(&bytes);
    if actual != record.content_hash || actual != cert.content_hash {
        return Err(RedeemError::ContentIntegrity {
            expected: record.content_hash,
            actual,
        });
    }
    Ok(Redeemed {
        multimedia_id: record.id.clone(),
        content_hash: actual,
        bytes,
    })
}
