//! HTTP gateway over a [`Platform`].
//!
//! All bodies are JSON unless noted. Write endpoints take a client-signed
//! [`Transaction`] and answer once it is sealed: `200` with the receipt on
//! success, `409` with the receipt on revert. Read endpoints report the tip
//! height they were answered from.
//!
//! | Method | Path | Operation |
//! |---|---|---|
//! | POST | `/v1/dids` | `did.register` |
//! | GET  | `/v1/dids/{did}` | DID resolution |
//! | POST | `/v1/dids/{did}/ddo` | `did.update_ddo` |
//! | POST | `/v1/dids/{did}/revoke` | `did.revoke` |
//! | POST | `/v1/agreements` | `agreement.generate` |
//! | GET  | `/v1/agreements/{id}` | agreement record |
//! | POST | `/v1/agreements/{id}/owner-signature` | `agreement.owner_sign` |
//! | POST | `/v1/agreements/{id}/provider-signature` | `agreement.provider_sign` |
//! | POST | `/v1/media` | `multimedia.register` |
//! | GET  | `/v1/media/{id}` | multimedia record |
//! | POST | `/v1/media/{id}/approve` | `multimedia.approve` |
//! | POST | `/v1/media/{id}/deregister` | `multimedia.deregister` |
//! | POST | `/v1/media/{id}/access-log` | `multimedia.log_access` |
//! | GET  | `/v1/media/{id}/access-log` | access log read |
//! | POST | `/v1/access-requests` | token generation (signed [`AccessRequest`]) |
//! | POST | `/v1/tokens/verify` | token verification, always `200` |
//! | POST | `/v1/redeem` | content redemption |
//! | POST | `/v1/blobs?kind=<kind>` | off-chain upload, raw body |
//! | GET  | `/v1/certificates/{id}` | certificate record |
//! | GET  | `/v1/query/{registry}/{key}` | any registry record |
//! | GET  | `/v1/accounts/{address}/nonce` | next nonce, counting pending |
//! | GET  | `/v1/status` | chain tip and parameters |
//! | GET  | `/v1/chain/export` | committed transaction log, NDJSON |
//!
//! Errors are `{"error": "<code>", "message": "<text>"}`.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::access::{AccessError, RedeemError};
use crate::crypto::{Address, Keypair};
use crate::keystore::{Keystore, KeystoreError};
use crate::ledger::{now_ms, write_log, ChainConfig, LedgerError, Receipt, SubmitError, Target, Transaction};
use crate::registry::{
    Call, AGREEMENT_REGISTRY, CERTIFICATE_REGISTRY, DID_REGISTRY, MULTIMEDIA_REGISTRY,
};
use crate::service::{AccessRequest, Platform, ServiceError};
use crate::store::{BlobStore, MediaKind, StoreError};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

/// Path segments of the write endpoint that accepts `call`.
pub fn write_route(call: &Call) -> Vec<String> {
    let mut path = vec!["v1".to_string()];
    let tail: &[&str] = match call {
        Call::DidRegister(_) => &["dids"],
        Call::DidUpdate(_) => &["dids", "", "ddo"],
        Call::DidRevoke(_) => &["dids", "", "revoke"],
        Call::AgreementGenerate(_) => &["agreements"],
        Call::AgreementOwnerSign(_) => &["agreements", "", "owner-signature"],
        Call::AgreementProviderSign(_) => &["agreements", "", "provider-signature"],
        Call::MediaRegister(_) => &["media"],
        Call::MediaApprove(_) => &["media", "", "approve"],
        Call::MediaDeregister(_) => &["media", "", "deregister"],
        Call::MediaLogAccess(_) => &["media", "", "access-log"],
        Call::IssueCert(_) => &["certificates"],
    };
    path.extend(tail.iter().map(|s| {
        if s.is_empty() {
            call.subject()
        } else {
            s.to_string()
        }
    }));
    path
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("bad-config: {0}")]
    BadConfig(String),
    #[error("port-in-use: {0}")]
    PortInUse(SocketAddr),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("keystore: {0}")]
    Keystore(#[from] KeystoreError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::BadConfig(_) => "bad-config",
            GatewayError::PortInUse(_) => "port-in-use",
            GatewayError::Io(_) => "io",
            GatewayError::Ledger(_) => "ledger",
            GatewayError::Keystore(e) => e.code(),
            GatewayError::Store(_) => "store",
        }
    }
}

fn default_bind() -> IpAddr {
    IpAddr::V4(Ipv4Addr::LOCALHOST)
}

fn default_port() -> u16 {
    8080
}

/// Gateway configuration file (TOML). Relative paths resolve against the
/// file's directory.
///
/// ```toml
/// port = 8080
/// store_dir = "blobs"
/// authority_key = "keys/authority.json"
/// provider_keys = ["keys/provider.json"]
/// ledger_config = "ledger.toml"   # or an inline [chain] table
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_bind")]
    pub bind: IpAddr,
    #[serde(default = "default_port")]
    pub port: u16,
    pub store_dir: PathBuf,
    #[serde(default)]
    pub store_quota_bytes: Option<u64>,
    #[serde(default)]
    pub ledger_config: Option<PathBuf>,
    #[serde(default)]
    pub chain: Option<ChainConfig>,
    /// Sealing key. Required when the chain persists to a data directory;
    /// otherwise an ephemeral key is generated.
    #[serde(default)]
    pub authority_key: Option<PathBuf>,
    #[serde(default)]
    pub provider_keys: Vec<PathBuf>,
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::BadConfig(format!("{}: {e}", path.display())))?;
        let mut config: GatewayConfig =
            toml::from_str(&text).map_err(|e| GatewayError::BadConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.store_dir);
        let chain_dir = config.chain.as_mut().and_then(|c| c.data_dir.as_mut());
        for p in [config.ledger_config.as_mut(), config.authority_key.as_mut(), chain_dir]
            .into_iter()
            .flatten()
            .chain(config.provider_keys.iter_mut())
        {
            rebase(p);
        }
        Ok(config)
    }

    pub fn chain_config(&self) -> Result<ChainConfig, GatewayError> {
        let chain = match (&self.ledger_config, &self.chain) {
            (Some(_), Some(_)) => {
                return Err(GatewayError::BadConfig(
                    "give either ledger_config or an inline [chain] table, not both".into(),
                ))
            }
            (Some(path), None) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| GatewayError::BadConfig(format!("{}: {e}", path.display())))?;
                let mut chain: ChainConfig = toml::from_str(&text)
                    .map_err(|e| GatewayError::BadConfig(format!("{}: {e}", path.display())))?;
                if let Some(dir) = chain.data_dir.as_mut().filter(|d| d.is_relative()) {
                    *dir = path.parent().unwrap_or(Path::new(".")).join(&*dir);
                }
                chain
            }
            (None, Some(chain)) => chain.clone(),
            (None, None) => ChainConfig::default(),
        };
        chain.validate().map_err(|e| GatewayError::BadConfig(e.to_string()))?;
        if chain.data_dir.is_some() && self.authority_key.is_none() {
            return Err(GatewayError::BadConfig(
                "a persistent chain needs a fixed authority_key".into(),
            ));
        }
        Ok(chain)
    }

    pub fn socket_addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }

    /// Opens the store and ledger and loads the hosted provider keys.
    pub fn build_platform(&self) -> Result<Platform, GatewayError> {
        let chain = self.chain_config()?;
        let authority = match &self.authority_key {
            Some(path) => Keystore::load_path(path)?.keys,
            None => Keypair::generate(),
        };
        let store = BlobStore::with_quota(&self.store_dir, self.store_quota_bytes)?;
        let mut platform = Platform::start(chain, authority, store)?;
        for path in &self.provider_keys {
            platform.host_provider(Keystore::load_path(path)?.keys);
        }
        Ok(platform)
    }
}

/// A gateway bound to a socket and serving in the background.
pub struct RunningGateway {
    addr: SocketAddr,
    platform: Arc<Platform>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningGateway {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn platform(&self) -> &Arc<Platform> {
        &self.platform
    }

    /// Resolves when the server stops on its own (it normally does not).
    pub async fn wait(self) -> Result<(), GatewayError> {
        Ok(self.task.await.map_err(std::io::Error::other)??)
    }

    pub async fn shutdown(self) -> Result<(), GatewayError> {
        if let Some(tx) = self.shutdown {
            let _ = tx.send(());
        }
        Ok(self.task.await.map_err(std::io::Error::other)??)
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in a background task.
pub async fn spawn(platform: Arc<Platform>, addr: SocketAddr) -> Result<RunningGateway, GatewayError> {
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => return Err(GatewayError::PortInUse(addr)),
        Err(e) => return Err(e.into()),
    };
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::clone(&platform));
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "gateway listening");
    Ok(RunningGateway {
        addr,
        platform,
        shutdown: Some(tx),
        task,
    })
}

/// Runs a gateway from a config file until interrupted.
pub async fn serve(config: GatewayConfig) -> Result<(), GatewayError> {
    let platform = Arc::new(config.build_platform()?);
    let RunningGateway {
        addr,
        platform: _platform,
        shutdown,
        mut task,
    } = spawn(platform, config.socket_addr()).await?;
    println!("listening on http://{addr}");
    let interrupted = tokio::select! {
        r = tokio::signal::ctrl_c() => {
            r?;
            true
        }
        r = &mut task => {
            r.map_err(std::io::Error::other)??;
            false
        }
    };
    if interrupted {
        if let Some(tx) = shutdown {
            let _ = tx.send(());
        }
        task.await.map_err(std::io::Error::other)??;
    }
    Ok(())
}

pub fn router(platform: Arc<Platform>) -> Router {
    Router::new()
        .route("/v1/dids", post(did_register))
        .route("/v1/dids/{did}", get(did_resolve))
        .route("/v1/dids/{did}/ddo", post(did_update))
        .route("/v1/dids/{did}/revoke", post(did_revoke))
        .route("/v1/agreements", post(agreement_generate))
        .route("/v1/agreements/{id}", get(agreement_get))
        .route("/v1/agreements/{id}/owner-signature", post(agreement_owner_sign))
        .route("/v1/agreements/{id}/provider-signature", post(agreement_provider_sign))
        .route("/v1/media", post(media_register))
        .route("/v1/media/{id}", get(media_get))
        .route("/v1/media/{id}/approve", post(media_approve))
        .route("/v1/media/{id}/deregister", post(media_deregister))
        .route("/v1/media/{id}/access-log", get(media_access_log).post(media_log_access))
        .route("/v1/access-requests", post(access_request))
        .route("/v1/tokens/verify", post(token_verify))
        .route("/v1/redeem", post(content_redeem))
        .route("/v1/blobs", post(blob_put))
        .route("/v1/certificates", post(certificate_issue))
        .route("/v1/certificates/{id}", get(certificate_get))
        .route("/v1/query/{registry}/{key}", get(query))
        .route("/v1/accounts/{address}/nonce", get(account_nonce))
        .route("/v1/status", get(status))
        .route("/v1/chain/export", get(chain_export))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(platform)
}

type Shared = State<Arc<Platform>>;

/// Error wrapper that renders as the JSON error envelope.
pub struct ApiError(ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let status = match &e {
            ServiceError::Submit(SubmitError::PoolFull) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Submit(_)
            | ServiceError::WrongOperation { .. }
            | ServiceError::SubjectMismatch { .. }
            | ServiceError::BadPayload(_)
            | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Reverted(receipt) => {
                return (StatusCode::CONFLICT, Json(receipt.clone())).into_response();
            }
            ServiceError::Access(AccessError::NotFound(_)) | ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Access(AccessError::NotGranted(_)) | ServiceError::ProviderNotHosted(_) => {
                StatusCode::FORBIDDEN
            }
            ServiceError::Access(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Unauthenticated => StatusCode::UNAUTHORIZED,
            ServiceError::Redeem(RedeemError::VerificationFailed { .. }) => StatusCode::FORBIDDEN,
            ServiceError::Redeem(RedeemError::ContentMissing) => StatusCode::GONE,
            ServiceError::Store(StoreError::Empty | StoreError::UnknownKind(_)) => StatusCode::BAD_REQUEST,
            ServiceError::Store(StoreError::StorageFull { .. }) => StatusCode::INSUFFICIENT_STORAGE,
            ServiceError::Redeem(_) | ServiceError::Store(_) | ServiceError::Ledger(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        let mut body = json!({ "error": e.code(), "message": e.to_string() });
        if let ServiceError::Redeem(RedeemError::VerificationFailed { step, .. }) = &e {
            body["step"] = json!(step);
            body["step_number"] = json!(step.number());
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::BadRequest(e.to_string())))
}

async fn write(p: &Platform, body: &Bytes, registry: &str, operation: &str, subject: Option<&str>) -> ApiResult {
    let tx: Transaction = parse(body)?;
    let receipt: Receipt = p.submit(tx, &Target::new(registry, operation), subject).await?;
    if receipt.is_success() {
        Ok(Json(receipt).into_response())
    } else {
        Err(ApiError(ServiceError::Reverted(receipt)))
    }
}

fn read(height: u64, mut value: Value) -> Response {
    if let Value::Object(map) = &mut value {
        map.insert("height".into(), json!(height));
        Json(value).into_response()
    } else {
        Json(json!({ "height": height, "value": value })).into_response()
    }
}

async fn did_register(State(p): Shared, body: Bytes) -> ApiResult {
    write(&p, &body, DID_REGISTRY, "register", None).await
}

async fn did_resolve(State(p): Shared, UrlPath(did): UrlPath<String>) -> ApiResult {
    let (height, ddo) = p.resolve_did(&did)?;
    Ok(read(height, json!({ "did": did, "ddo": ddo })))
}

async fn did_update(State(p): Shared, UrlPath(did): UrlPath<String>, body: Bytes) -> ApiResult {
    write(&p, &body, DID_REGISTRY, "update_ddo", Some(&did)).await
}

async fn did_revoke(State(p): Shared, UrlPath(did): UrlPath<String>, body: Bytes) -> ApiResult {
    write(&p, &body, DID_REGISTRY, "revoke", Some(&did)).await
}

async fn agreement_generate(State(p): Shared, body: Bytes) -> ApiResult {
    write(&p, &body, AGREEMENT_REGISTRY, "generate", None).await
}

async fn agreement_get(State(p): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    let (height, value) = p.query(AGREEMENT_REGISTRY, &id)?;
    Ok(read(height, value))
}

async fn agreement_owner_sign(State(p): Shared, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    write(&p, &body, AGREEMENT_REGISTRY, "owner_sign", Some(&id)).await
}

async fn agreement_provider_sign(State(p): Shared, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    write(&p, &body, AGREEMENT_REGISTRY, "provider_sign", Some(&id)).await
}

async fn media_register(State(p): Shared, body: Bytes) -> ApiResult {
    write(&p, &body, MULTIMEDIA_REGISTRY, "register", None).await
}

async fn media_get(State(p): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    let (height, value) = p.query(MULTIMEDIA_REGISTRY, &id)?;
    Ok(read(height, value))
}

async fn media_approve(State(p): Shared, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    write(&p, &body, MULTIMEDIA_REGISTRY, "approve", Some(&id)).await
}

async fn media_deregister(State(p): Shared, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    write(&p, &body, MULTIMEDIA_REGISTRY, "deregister", Some(&id)).await
}

async fn media_log_access(State(p): Shared, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    write(&p, &body, MULTIMEDIA_REGISTRY, "log_access", Some(&id)).await
}

async fn media_access_log(State(p): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    let (height, value) = p.query(MULTIMEDIA_REGISTRY, &id)?;
    Ok(read(
        height,
        json!({ "multimedia_id": id, "access_info": value["access_info"].clone() }),
    ))
}

async fn certificate_issue(State(p): Shared, body: Bytes) -> ApiResult {
    write(&p, &body, CERTIFICATE_REGISTRY, "issue_cert", None).await
}

async fn certificate_get(State(p): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    let (height, value) = p.query(CERTIFICATE_REGISTRY, &id)?;
    Ok(read(height, value))
}

async fn query(State(p): Shared, UrlPath((registry, key)): UrlPath<(String, String)>) -> ApiResult {
    let (height, value) = p.query(&registry, &key)?;
    Ok(read(height, value))
}

async fn access_request(State(p): Shared, body: Bytes) -> ApiResult {
    let req: AccessRequest = parse(&body)?;
    let grant = p.request_access(&req, now_ms()).await?;
    Ok(Json(grant).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyBody {
    token: String,
    /// Verification instant in epoch ms; defaults to the gateway clock.
    #[serde(default)]
    at: Option<u64>,
}

/// Verification is a query: any body, however malformed, yields a report.
async fn token_verify(State(p): Shared, body: Bytes) -> Response {
    let (token, at) = match serde_json::from_slice::<VerifyBody>(&body) {
        Ok(v) => (v.token, v.at),
        Err(_) => (String::from_utf8_lossy(&body).into_owned(), None),
    };
    let (height, report) = p.verify(&token, at.unwrap_or_else(now_ms));
    let value = serde_json::to_value(report).expect("report serializes");
    read(height, value)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RedeemBody {
    token: String,
}

async fn content_redeem(State(p): Shared, body: Bytes) -> ApiResult {
    let req: RedeemBody = parse(&body)?;
    let (height, got) = p.redeem(&req.token, now_ms())?;
    Ok(read(
        height,
        json!({
            "multimedia_id": got.multimedia_id,
            "content_hash": got.content_hash,
            "content": STANDARD.encode(&got.bytes),
        }),
    ))
}

#[derive(Deserialize)]
struct BlobQuery {
    #[serde(default)]
    kind: Option<String>,
}

async fn blob_put(State(p): Shared, Query(q): Query<BlobQuery>, body: Bytes) -> ApiResult {
    let kind = match q.kind.as_deref() {
        None => MediaKind::MultimediaSource,
        Some(k) => k.parse::<MediaKind>().map_err(ServiceError::from)?,
    };
    let hash = p.put_blob(&body, kind)?;
    Ok(Json(json!({
        "content_hash": hash,
        "locator": crate::registry::upload_ref(&hash),
        "kind": kind.label(),
        "size": body.len(),
    }))
    .into_response())
}

async fn account_nonce(State(p): Shared, UrlPath(address): UrlPath<String>) -> ApiResult {
    let addr: Address = address
        .parse()
        .map_err(|_| ApiError(ServiceError::BadRequest(format!("bad address {address:?}"))))?;
    let height = p.snapshot().height;
    Ok(read(
        height,
        json!({ "address": addr, "next_nonce": p.ledger().next_nonce(&addr) }),
    ))
}

async fn status(State(p): Shared) -> Response {
    Json(p.status()).into_response()
}

async fn chain_export(State(p): Shared) -> ApiResult {
    let mut out = Vec::new();
    write_log(&mut out, &p.ledger().export_log()).map_err(|e| ServiceError::Store(e.into()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response())
}
