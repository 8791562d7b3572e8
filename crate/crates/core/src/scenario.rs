//! Builders for the owner / provider / end-user cast used by the examples,
//! the benchmark fixtures and the tests.

use crate::access::ValidTime;
use crate::crypto::{sha256, Hash32, Keypair};
use crate::registry::{
    platform_did, AgreementSignArgs, AgreementTerms, Call, DidDocument, DidRegisterArgs,
    MediaApproveArgs, MediaRegistration, upload_ref,
};
use crate::rights::AccessRights;

/// An account plus the platform DID bound to it.
#[derive(Debug, Clone)]
pub struct Participant {
    pub name: String,
    pub keys: Keypair,
    pub did: String,
}

impl Participant {
    pub fn new(keys: Keypair, name: impl Into<String>) -> Self {
        let did = platform_did(&keys.address());
        Participant {
            name: name.into(),
            keys,
            did,
        }
    }

    /// Deterministic participant derived from `seed`.
    pub fn from_seed(seed: &str) -> Self {
        Self::new(Keypair::from_seed(seed), seed)
    }

    pub fn document(&self, endpoint: Option<&str>) -> DidDocument {
        DidDocument::for_key(&self.did, &self.keys.public_key(), endpoint)
    }

    pub fn register_did(&self) -> Call {
        Call::DidRegister(DidRegisterArgs {
            bound_account: self.keys.address(),
            did: self.did.clone(),
            ddo: self
                .document(Some(&format!("https://contact.example/{}", self.name)))
                .to_canonical(),
        })
    }

    /// Registration call for `content`, signing its hash.
    pub fn register_media(&self, id: &str, content: &[u8]) -> Call {
        let content_hash = sha256(content);
        Call::MediaRegister(MediaRegistration {
            id: id.to_string(),
            owner_did: self.did.clone(),
            content_hash,
            owner_sig: self.keys.sign(content_hash.as_bytes()),
            upload_ref: upload_ref(&content_hash),
        })
    }

    pub fn sign_terms(&self, terms: &AgreementTerms) -> AgreementSignArgs {
        AgreementSignArgs {
            id: terms.id.clone(),
            sig: self.keys.sign(&terms.signing_payload()),
        }
    }
}

/// Owner, provider and end user.
#[derive(Debug, Clone)]
pub struct Cast {
    pub owner: Participant,
    pub provider: Participant,
    pub enduser: Participant,
}

impl Cast {
    pub fn from_seed(seed: &str) -> Self {
        Cast {
            owner: Participant::from_seed(&format!("{seed}/owner")),
            provider: Participant::from_seed(&format!("{seed}/provider")),
            enduser: Participant::from_seed(&format!("{seed}/enduser")),
        }
    }

    pub fn all(&self) -> [&Participant; 3] {
        [&self.owner, &self.provider, &self.enduser]
    }

    pub fn terms(&self, id: &str, agreement_text: &[u8], copyrights: AccessRights) -> AgreementTerms {
        AgreementTerms {
            id: id.to_string(),
            owner_did: self.owner.did.clone(),
            owner_account: self.owner.keys.address(),
            provider_did: self.provider.did.clone(),
            agreement_hash: sha256(agreement_text),
            valid_time: 365 * 24 * 3600,
            copyrights: copyrights.to_names(),
        }
    }

    pub fn approve(&self, media_id: &str, agreement_hash: Hash32) -> Call {
        Call::MediaApprove(MediaApproveArgs {
            id: media_id.to_string(),
            provider_did: self.provider.did.clone(),
            agreement_hash,
        })
    }

    pub fn token_request(
        &self,
        media_id: &str,
        rights: AccessRights,
        valid_time: ValidTime,
    ) -> crate::access::TokenRequest {
        crate::access::TokenRequest {
            owner_did: self.owner.did.clone(),
            provider_did: self.provider.did.clone(),
            enduser_did: self.enduser.did.clone(),
            multimedia_id: media_id.to_string(),
            rights,
            valid_time,
        }
    }
}
