use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::crypto::{sha256, Address, Canonical, Hash32, Keypair, PublicKey, Signature};

/// Registry and operation a transaction is addressed to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Target {
    pub registry: String,
    pub operation: String,
}

impl Target {
    pub fn new(registry: impl Into<String>, operation: impl Into<String>) -> Self {
        Target {
            registry: registry.into(),
            operation: operation.into(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.registry, self.operation)
    }
}

/// A signed state transition.
///
/// The sender's public key travels with the transaction; the ledger checks
/// that it hashes to `sender` before checking the signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub sender: Address,
    pub public_key: PublicKey,
    pub nonce: u64,
    pub target: Target,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    pub signature: Signature,
}

impl Transaction {
    pub fn signing_bytes(sender: &Address, nonce: u64, target: &Target, payload: &[u8]) -> Vec<u8> {
        Canonical::new()
            .field("mdm/tx/v1")
            .field(sender.as_bytes())
            .u64(nonce)
            .field(&target.registry)
            .field(&target.operation)
            .field(payload)
            .finish()
    }

    pub fn sign(keys: &Keypair, nonce: u64, target: Target, payload: Vec<u8>) -> Self {
        let sender = keys.address();
        let signature = keys.sign(&Self::signing_bytes(&sender, nonce, &target, &payload));
        Transaction {
            sender,
            public_key: keys.public_key(),
            nonce,
            target,
            payload,
            signature,
        }
    }

    pub fn verify_signature(&self) -> bool {
        self.public_key.address() == self.sender
            && self.public_key.verify(
                &Self::signing_bytes(&self.sender, self.nonce, &self.target, &self.payload),
                &self.signature,
            )
    }

    pub fn hash(&self) -> Hash32 {
        let mut bytes = Self::signing_bytes(&self.sender, self.nonce, &self.target, &self.payload);
        bytes.extend_from_slice(&self.signature.0);
        sha256(&bytes)
    }
}

pub(crate) mod b64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}
