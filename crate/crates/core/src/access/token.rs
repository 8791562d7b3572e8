//! Off-chain access token wire format.
//!
//! ```text
//! base64url(header) "." base64url(payload) "." base64url(provider signature)
//! header  = {"ver":1,"alg":"Ed25519"}
//! payload = {"cert_id":"<hex>","provider":"<did>","not_before":<ms>,"not_after":<ms>}
//! ```
//!
//! Segments use unpadded base64url. Decoding is strict: only the exact bytes
//! produced by [`AccessToken::encode`] decode successfully.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ValidTime;
use crate::crypto::{Hash32, Signature};

pub const TOKEN_VERSION: u32 = 1;
pub const TOKEN_ALG: &str = "Ed25519";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("token must have three dot-separated segments")]
    Segments,
    #[error("segment {0} is not unpadded base64url")]
    Base64(usize),
    #[error("bad header: {0}")]
    Header(String),
    #[error("bad payload: {0}")]
    Payload(String),
    #[error("signature segment must be 64 bytes")]
    SignatureLength,
    #[error("token is not in canonical encoding")]
    NonCanonical,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    ver: u32,
    alg: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    cert_id: Hash32,
    provider: String,
    not_before: u64,
    not_after: u64,
}

/// The four fields that travel to the end user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessToken {
    pub cert_id: Hash32,
    pub provider_did: String,
    pub provider_sig: Signature,
    pub valid_time: ValidTime,
}

impl AccessToken {
    pub fn encode(&self) -> String {
        let header = serde_json::to_vec(&Header {
            ver: TOKEN_VERSION,
            alg: TOKEN_ALG.to_string(),
        })
        .expect("header serializes");
        let payload = serde_json::to_vec(&Payload {
            cert_id: self.cert_id,
            provider: self.provider_did.clone(),
            not_before: self.valid_time.not_before,
            not_after: self.valid_time.not_after,
        })
        .expect("payload serializes");
        format!(
            "{}.{}.{}",
            URL_SAFE_NO_PAD.encode(header),
            URL_SAFE_NO_PAD.encode(payload),
            URL_SAFE_NO_PAD.encode(self.provider_sig.0)
        )
    }

    pub fn decode(text: &str) -> Result<Self, TokenError> {
        let segments: Vec<&str> = text.split('.').collect();
        let [header, payload, sig] = segments.as_slice() else {
            return Err(TokenError::Segments);
        };
        let raw = |i: usize, s: &str| URL_SAFE_NO_PAD.decode(s).map_err(|_| TokenError::Base64(i));

        let header: Header =
            serde_json::from_slice(&raw(0, header)?).map_err(|e| TokenError::Header(e.to_string()))?;
        if header.ver != TOKEN_VERSION || header.alg != TOKEN_ALG {
            return Err(TokenError::Header(format!(
                "unsupported version {} / algorithm {:?}",
                header.ver, header.alg
            )));
        }
        let payload: Payload = serde_json::from_slice(&raw(1, payload)?)
            .map_err(|e| TokenError::Payload(e.to_string()))?;
        let provider_sig =
            Signature::from_slice(&raw(2, sig)?).map_err(|_| TokenError::SignatureLength)?;

        let token = AccessToken {
            cert_id: payload.cert_id,
            provider_did: payload.provider,
            provider_sig,
            valid_time: ValidTime {
                not_before: payload.not_before,
                not_after: payload.not_after,
            },
        };
        if token.encode() != text {
            return Err(TokenError::NonCanonical);
        }
        Ok(token)
    }
}
