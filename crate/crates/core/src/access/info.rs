use serde::{Deserialize, Serialize};

use crate::crypto::{sha256, Canonical, Hash32, Signature};
use crate::rights::AccessRights;

/// Half-open validity window `[not_before, not_after)` in epoch milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidTime {
    pub not_before: u64,
    pub not_after: u64,
}

impl ValidTime {
    pub fn starting_at(now: u64, duration_ms: u64) -> Self {
        ValidTime {
            not_before: now,
            not_after: now.saturating_add(duration_ms),
        }
    }

    pub fn contains(&self, now: u64) -> bool {
        self.not_before <= now && now < self.not_after
    }

    pub fn is_well_formed(&self) -> bool {
        self.not_before < self.not_after
    }

    fn to_bytes(self) -> [u8; 16] {
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&self.not_before.to_be_bytes());
        out[8..].copy_from_slice(&self.not_after.to_be_bytes());
        out
    }
}

/// Everything a certificate commits to. Its canonical bytes are hashed into
/// the certificate id and signed by the provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnchainInfo {
    pub owner_did: String,
    pub provider_did: String,
    pub enduser_did: String,
    pub multimedia_id: String,
    pub access_rights: AccessRights,
    pub valid_time: ValidTime,
    pub owner_sig: Signature,
}

impl OnchainInfo {
    /// Seven length-prefixed fields in declaration order: four UTF-8
    /// strings, the one-byte rights mask, the two big-endian `u64` window
    /// bounds as one 16-byte field, and the 64-byte owner signature.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        Canonical::new()
            .field(&self.owner_did)
            .field(&self.provider_did)
            .field(&self.enduser_did)
            .field(&self.multimedia_id)
            .field([self.access_rights.mask()])
            .field(self.valid_time.to_bytes())
            .field(self.owner_sig.as_bytes())
            .finish()
    }

    pub fn cert_id(&self) -> Hash32 {
        sha256(&self.canonical_bytes())
    }
}
