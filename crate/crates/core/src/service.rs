//! The platform service layer: everything the HTTP gateway does, minus HTTP.
//!
//! A [`Platform`] owns the ledger (with its sealing thread), the off-chain
//! blob store, and the key pairs of the providers it grants access on behalf
//! of. Writes arrive as client-signed transactions and return once sealed.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{
    prepare_certificate, redeem, verify_token, AccessError, RedeemError, Redeemed, TokenRequest,
    VerificationReport,
};
use crate::crypto::{Canonical, Hash32, Keypair, Signature};
use crate::ledger::{
    ChainConfig, Ledger, LedgerError, Receipt, SealerHandle, Snapshot, SubmitError, Target, Transaction,
};
use crate::registry::{Call, ChainState, RegistryError};
use crate::rights::AccessRights;
use crate::store::{BlobStore, MediaKind, StoreError};

/// Decides whether a provider grants a rights request. Runs against the
/// committed state the certificate will be prepared from.
pub trait GrantPolicy: Send + Sync {
    fn decide(&self, state: &ChainState, req: &TokenRequest) -> Result<(), AccessError>;
}

/// Grants any rights covered by the settled agreement the work was approved
/// under.
#[derive(Debug, Clone, Copy, Default)]
pub struct AgreementScope;

impl GrantPolicy for AgreementScope {
    fn decide(&self, state: &ChainState, req: &TokenRequest) -> Result<(), AccessError> {
        let record = state
            .multimedia
            .get(&req.multimedia_id)
            .map_err(|_| AccessError::NotFound(req.multimedia_id.clone()))?;
        let hash = record.agreement_hash.ok_or(AccessError::NotApproved)?;
        let permitted: AccessRights = state
            .agreements
            .settled_with_hash(&hash)
            .filter(|a| a.owner_did == record.owner_did && Some(&a.provider_did) == record.provider_did.as_ref())
            .flat_map(|a| a.rights().iter())
            .collect();
        let excess: AccessRights = req.rights.iter().filter(|r| !permitted.contains(*r)).collect();
        if excess.is_empty() {
            Ok(())
        } else {
            Err(AccessError::NotGranted(excess.to_names()))
        }
    }
}

/// A token request signed by the end user's account key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessRequest {
    pub request: TokenRequest,
    pub signature: Signature,
}

impl AccessRequest {
    pub fn signing_bytes(req: &TokenRequest) -> Vec<u8> {
        Canonical::new()
            .field("mdm/access-request/v1")
            .field(&req.owner_did)
            .field(&req.provider_did)
            .field(&req.enduser_did)
            .field(&req.multimedia_id)
            .field([req.rights.mask()])
            .u64(req.valid_time.not_before)
            .u64(req.valid_time.not_after)
            .finish()
    }

    pub fn sign(keys: &Keypair, request: TokenRequest) -> Self {
        let signature = keys.sign(&Self::signing_bytes(&request));
        AccessRequest { request, signature }
    }
}

/// Result of a granted access request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub token: String,
    pub cert_id: Hash32,
    #[serde(flatten)]
    pub receipt: Receipt,
    /// Contact endpoint from the end user's DID document, if it lists one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivery_endpoint: Option<String>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Submit(#[from] SubmitError),
    #[error("wrong-operation: endpoint expects {expected}, transaction targets {got}")]
    WrongOperation { expected: String, got: String },
    #[error("subject-mismatch: path names {path:?}, payload names {payload:?}")]
    SubjectMismatch { path: String, payload: String },
    #[error("bad-payload: {0}")]
    BadPayload(String),
    #[error("bad-request: {0}")]
    BadRequest(String),
    #[error("transaction reverted: {}", .0.outcome.reason.as_deref().unwrap_or("unknown"))]
    Reverted(Receipt),
    #[error("{0}")]
    Access(#[from] AccessError),
    #[error("unauthenticated: access request signature does not verify under the end user's DID key")]
    Unauthenticated,
    #[error("provider-not-hosted: no signing key for {0}")]
    ProviderNotHosted(String),
    #[error("not-found: {0}")]
    NotFound(String),
    #[error("{0}")]
    Redeem(#[from] RedeemError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Submit(SubmitError::BadSignature) => "bad-signature",
            ServiceError::Submit(SubmitError::StaleNonce { .. }) => "stale-nonce",
            ServiceError::Submit(SubmitError::PoolFull) => "pool-full",
            ServiceError::WrongOperation { .. } => "wrong-operation",
            ServiceError::SubjectMismatch { .. } => "subject-mismatch",
            ServiceError::BadPayload(_) => "bad-payload",
            ServiceError::BadRequest(_) => "bad-request",
            ServiceError::Reverted(_) => "reverted",
            ServiceError::Access(e) => e.code(),
            ServiceError::Unauthenticated => "unauthenticated",
            ServiceError::ProviderNotHosted(_) => "provider-not-hosted",
            ServiceError::NotFound(_) => "not-found",
            ServiceError::Redeem(e) => e.code(),
            ServiceError::Store(StoreError::Empty) => "empty-blob",
            ServiceError::Store(StoreError::StorageFull { .. }) => "storage-full",
            ServiceError::Store(StoreError::UnknownKind(_)) => "unknown-kind",
            ServiceError::Store(_) => "store",
            ServiceError::Ledger(_) => "ledger",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStatus {
    pub height: u64,
    pub block_hash: Hash32,
    pub state_root: Hash32,
    pub timestamp: u64,
    pub pending: usize,
    pub block_interval_ms: u64,
    pub block_capacity: u64,
    pub providers: Vec<String>,
}

pub struct Platform {
    ledger: Arc<Ledger<ChainState>>,
    store: BlobStore,
    providers: BTreeMap<String, Keypair>,
    policy: Box<dyn GrantPolicy>,
    _sealer: Option<SealerHandle>,
}

impl Platform {
    /// Opens the ledger and starts its sealing thread.
    pub fn start(config: ChainConfig, authority: Keypair, store: BlobStore) -> Result<Self, LedgerError> {
        let ledger = Arc::new(Ledger::open(config, authority)?);
        let sealer = ledger.start_sealer();
        Ok(Platform {
            ledger,
            store,
            providers: BTreeMap::new(),
            policy: Box::new(AgreementScope),
            _sealer: Some(sealer),
        })
    }

    /// Wraps an existing ledger without starting a sealer; the caller drives
    /// sealing.
    pub fn with_ledger(ledger: Arc<Ledger<ChainState>>, store: BlobStore) -> Self {
        Platform {
            ledger,
            store,
            providers: BTreeMap::new(),
            policy: Box::new(AgreementScope),
            _sealer: None,
        }
    }

    pub fn with_policy(mut self, policy: impl GrantPolicy + 'static) -> Self {
        self.policy = Box::new(policy);
        self
    }

    /// Registers a provider key this platform grants access with. The key's
    /// platform DID is the provider DID it serves.
    pub fn host_provider(&mut self, keys: Keypair) -> String {
        let did = crate::registry::platform_did(&keys.address());
        self.providers.insert(did.clone(), keys);
        did
    }

    pub fn ledger(&self) -> &Arc<Ledger<ChainState>> {
        &self.ledger
    }

    pub fn store(&self) -> &BlobStore {
        &self.store
    }

    pub fn snapshot(&self) -> Arc<Snapshot<ChainState>> {
        self.ledger.snapshot()
    }

    pub fn status(&self) -> ChainStatus {
        let snap = self.snapshot();
        let config = self.ledger.config();
        ChainStatus {
            height: snap.height,
            block_hash: snap.block_hash,
            state_root: snap.state_root,
            timestamp: snap.timestamp,
            pending: self.ledger.pending(),
            block_interval_ms: config.block_interval_ms,
            block_capacity: config.block_capacity,
            providers: self.providers.keys().cloned().collect(),
        }
    }

    /// Submits a client-signed transaction and waits for it to be sealed.
    /// `expected` is the only target the calling endpoint accepts; `subject`
    /// (when given) must equal the record key the payload names. A revert is
    /// returned as a receipt, not an error.
    pub async fn submit(
        &self,
        tx: Transaction,
        expected: &Target,
        subject: Option<&str>,
    ) -> Result<Receipt, ServiceError> {
        if &tx.target != expected {
            return Err(ServiceError::WrongOperation {
                expected: expected.to_string(),
                got: tx.target.to_string(),
            });
        }
        let call = Call::decode(&tx.target, &tx.payload).map_err(|e| match e {
            RegistryError::BadPayload(m) => ServiceError::BadPayload(m),
            other => ServiceError::BadPayload(other.to_string()),
        })?;
        if let Some(path) = subject {
            let named = call.subject();
            if named != path {
                return Err(ServiceError::SubjectMismatch {
                    path: path.to_string(),
                    payload: named,
                });
            }
        }
        let handle = self.ledger.submit(tx)?;
        Ok(handle.confirmed().await?)
    }

    /// Runs the access-granting flow: authenticate the end user, apply the
    /// grant policy, prepare and sign the certificate with the hosted
    /// provider key, issue it on chain, and return the token.
    pub async fn request_access(&self, req: &AccessRequest, now: u64) -> Result<Grant, ServiceError> {
        let snap = self.snapshot();
        let state = &snap.state;
        let r = &req.request;
        let enduser_key = state
            .dids
            .signing_key(&r.enduser_did)
            .map_err(|_| AccessError::UnknownEnduser(r.enduser_did.clone()))?;
        if !enduser_key.verify(&AccessRequest::signing_bytes(r), &req.signature) {
            return Err(ServiceError::Unauthenticated);
        }
        let provider = self
            .providers
            .get(&r.provider_did)
            .ok_or_else(|| ServiceError::ProviderNotHosted(r.provider_did.clone()))?;
        self.policy.decide(state, r)?;
        let prepared = prepare_certificate(state, provider, r, now)?;
        let delivery_endpoint = state
            .dids
            .resolve_document(&r.enduser_did)
            .ok()
            .and_then(|d| d.service_endpoint().map(str::to_string));
        drop(snap);

        let call = Call::IssueCert(prepared.issue);
        let handle = self.ledger.submit_signed(provider, call.target(), call.payload())?;
        let receipt = handle.confirmed().await?;
        if !receipt.is_success() {
            return Err(ServiceError::Reverted(receipt));
        }
        let token = prepared.token.encode();
        self.store.put(token.as_bytes(), MediaKind::TokenCopy)?;
        Ok(Grant {
            token,
            cert_id: prepared.token.cert_id,
            receipt,
            delivery_endpoint,
        })
    }

    /// Read-only: verifies a token against the committed tip.
    pub fn verify(&self, token: &str, now: u64) -> (u64, VerificationReport) {
        let snap = self.snapshot();
        (snap.height, verify_token(&snap.state, token, now))
    }

    pub fn redeem(&self, token: &str, now: u64) -> Result<(u64, Redeemed), ServiceError> {
        let snap = self.snapshot();
        let redeemed = redeem(&snap.state, &self.store, token, now)?;
        Ok((snap.height, redeemed))
    }

    /// Returns the stored DID document text.
    pub fn resolve_did(&self, did: &str) -> Result<(u64, String), ServiceError> {
        let snap = self.snapshot();
        let ddo = snap
            .state
            .dids
            .resolve(did)
            .map_err(|e| ServiceError::NotFound(format!("{did} ({})", e.code())))?
            .to_string();
        Ok((snap.height, ddo))
    }

    pub fn query(&self, registry: &str, key: &str) -> Result<(u64, serde_json::Value), ServiceError> {
        let snap = self.snapshot();
        let value = snap
            .state
            .query(registry, key)
            .map_err(|e| ServiceError::NotFound(format!("{registry}/{key}: {e}")))?;
        Ok((snap.height, value))
    }

    pub fn put_blob(&self, bytes: &[u8], kind: MediaKind) -> Result<Hash32, ServiceError> {
        Ok(self.store.put(bytes, kind)?)
    }
}
