//! Async HTTP client for the gateway. Transactions are signed locally; only
//! public keys and signatures go over the wire.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use reqwest::{StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::access::{TokenRequest, VerificationReport};
use crate::crypto::{Address, Hash32, Keypair};
use crate::gateway::write_route;
use crate::ledger::{read_log, Receipt, Transaction};
use crate::registry::Call;
use crate::service::{AccessRequest, ChainStatus, Grant};
use crate::store::MediaKind;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("gateway-unreachable: {0}")]
    Unreachable(String),
    #[error("{code}: {message} (HTTP {status})")]
    Api {
        status: u16,
        code: String,
        message: String,
        body: Value,
    },
    #[error("bad-response: {0}")]
    BadResponse(String),
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::Unreachable(_) => "gateway-unreachable",
            ClientError::Api { code, .. } => code,
            ClientError::BadResponse(_) => "bad-response",
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        if e.is_decode() {
            ClientError::BadResponse(e.to_string())
        } else {
            ClientError::Unreachable(e.to_string())
        }
    }
}

/// A verification report and the tip height it was computed at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub height: u64,
    #[serde(flatten)]
    pub report: VerificationReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RedeemResponse {
    pub height: u64,
    pub multimedia_id: String,
    pub content_hash: Hash32,
    pub content: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobReceipt {
    pub content_hash: Hash32,
    pub locator: String,
    pub kind: String,
    pub size: u64,
}

#[derive(Debug, Clone)]
pub struct GatewayClient {
    base: Url,
    http: reqwest::Client,
}

impl GatewayClient {
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let base = Url::parse(base).map_err(|e| ClientError::Unreachable(format!("bad gateway url {base:?}: {e}")))?;
        Ok(GatewayClient {
            base,
            http: reqwest::Client::new(),
        })
    }

    pub fn base(&self) -> &Url {
        &self.base
    }

    fn url<S: AsRef<str>>(&self, segments: &[S]) -> Url {
        let mut url = self.base.clone();
        url.path_segments_mut()
            .expect("http urls have a path")
            .pop_if_empty()
            .extend(segments.iter().map(AsRef::as_ref));
        url
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::BadResponse(e.to_string()));
        }
        let body: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        Err(ClientError::Api {
            status: status.as_u16(),
            code: body["error"].as_str().unwrap_or("http-error").to_string(),
            message: body["message"]
                .as_str()
                .map(str::to_string)
                .unwrap_or_else(|| String::from_utf8_lossy(&bytes).into_owned()),
            body,
        })
    }

    async fn get_json<T: DeserializeOwned, S: AsRef<str>>(&self, segments: &[S]) -> Result<T, ClientError> {
        Self::decode(self.http.get(self.url(segments)).send().await?).await
    }

    async fn post_json<T: DeserializeOwned, S: AsRef<str>>(
        &self,
        segments: &[S],
        body: &impl Serialize,
    ) -> Result<T, ClientError> {
        Self::decode(self.http.post(self.url(segments)).json(body).send().await?).await
    }

    /// Posts a signed transaction to the endpoint for `call` and returns the
    /// receipt, whether the transaction succeeded or reverted.
    pub async fn submit(&self, call: &Call, tx: &Transaction) -> Result<Receipt, ClientError> {
        let resp = self.http.post(self.url(&write_route(call))).json(tx).send().await?;
        if resp.status() == StatusCode::CONFLICT {
            let bytes = resp.bytes().await?;
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::BadResponse(e.to_string()));
        }
        Self::decode(resp).await
    }

    /// Signs `call` with `nonce` and submits it.
    pub async fn send_with_nonce(&self, keys: &Keypair, nonce: u64, call: &Call) -> Result<Receipt, ClientError> {
        let tx = Transaction::sign(keys, nonce, call.target(), call.payload());
        self.submit(call, &tx).await
    }

    /// Fetches the account's next nonce, signs `call` and submits it.
    pub async fn send(&self, keys: &Keypair, call: &Call) -> Result<Receipt, ClientError> {
        let nonce = self.next_nonce(&keys.address()).await?;
        self.send_with_nonce(keys, nonce, call).await
    }

    pub async fn next_nonce(&self, address: &Address) -> Result<u64, ClientError> {
        let v: Value = self.get_json(&["v1", "accounts", &address.to_hex(), "nonce"]).await?;
        v["next_nonce"]
            .as_u64()
            .ok_or_else(|| ClientError::BadResponse("missing next_nonce".into()))
    }

    /// Returns the DID document text exactly as registered.
    pub async fn resolve_did(&self, did: &str) -> Result<String, ClientError> {
        let v: Value = self.get_json(&["v1", "dids", did]).await?;
        v["ddo"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClientError::BadResponse("missing ddo".into()))
    }

    /// Any registry record as JSON, with the tip `height` added.
    pub async fn query(&self, registry: &str, key: &str) -> Result<Value, ClientError> {
        self.get_json(&["v1", "query", registry, key]).await
    }

    pub async fn access_log(&self, media_id: &str) -> Result<Vec<Hash32>, ClientError> {
        let v: Value = self.get_json(&["v1", "media", media_id, "access-log"]).await?;
        serde_json::from_value(v["access_info"].clone()).map_err(|e| ClientError::BadResponse(e.to_string()))
    }

    pub async fn put_blob(&self, bytes: Vec<u8>, kind: MediaKind) -> Result<BlobReceipt, ClientError> {
        let mut url = self.url(&["v1", "blobs"]);
        url.query_pairs_mut().append_pair("kind", kind.label());
        Self::decode(self.http.post(url).body(bytes).send().await?).await
    }

    /// Signs the request with the end user's key and asks the provider's
    /// gateway for a token.
    pub async fn request_access(&self, enduser: &Keypair, request: TokenRequest) -> Result<Grant, ClientError> {
        self.request_access_signed(&AccessRequest::sign(enduser, request)).await
    }

    pub async fn request_access_signed(&self, request: &AccessRequest) -> Result<Grant, ClientError> {
        self.post_json(&["v1", "access-requests"], request).await
    }

    /// Verifies at the gateway's clock, or at `at` if given.
    pub async fn verify_token(&self, token: &str, at: Option<u64>) -> Result<VerifyResponse, ClientError> {
        let mut body = json!({ "token": token });
        if let Some(at) = at {
            body["at"] = json!(at);
        }
        self.post_json(&["v1", "tokens", "verify"], &body).await
    }

    /// Sends an arbitrary body to the verification endpoint.
    pub async fn verify_raw(&self, body: Vec<u8>) -> Result<VerifyResponse, ClientError> {
        Self::decode(self.http.post(self.url(&["v1", "tokens", "verify"])).body(body).send().await?).await
    }

    pub async fn redeem(&self, token: &str) -> Result<RedeemResponse, ClientError> {
        let v: Value = self.post_json(&["v1", "redeem"], &json!({ "token": token })).await?;
        let bad = |what: &str| ClientError::BadResponse(format!("redeem response lacks {what}"));
        Ok(RedeemResponse {
            height: v["height"].as_u64().ok_or_else(|| bad("height"))?,
            multimedia_id: v["multimedia_id"].as_str().ok_or_else(|| bad("multimedia_id"))?.to_string(),
            content_hash: v["content_hash"]
                .as_str()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("content_hash"))?,
            content: v["content"]
                .as_str()
                .and_then(|s| STANDARD.decode(s).ok())
                .ok_or_else(|| bad("content"))?,
        })
    }

    pub async fn status(&self) -> Result<ChainStatus, ClientError> {
        self.get_json(&["v1", "status"]).await
    }

    pub async fn export_chain(&self) -> Result<Vec<Transaction>, ClientError> {
        let resp = self.http.get(self.url(&["v1", "chain", "export"])).send().await?;
        if !resp.status().is_success() {
            return Self::decode(resp).await;
        }
        let bytes = resp.bytes().await?;
        read_log(bytes.as_ref()).map_err(|e| ClientError::BadResponse(e.to_string()))
    }
}
