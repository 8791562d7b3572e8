//! The `mdm` command line: key management, the owner / provider / end-user
//! flows against a gateway, plus `serve`, `bench` and `replay`.
//!
//! Every command prints `key: value` lines, or one JSON object with
//! `--json`. Failures exit with status 1 and print `error[<code>]: <message>`
//! on stderr, or `{"error": "<code>", "message": ...}` on stdout with
//! `--json`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::access::{AccessToken, ValidTime};
use crate::bench::{emit_csv, run_bench, BenchConfig, BenchService};
use crate::client::{ClientError, GatewayClient};
use crate::crypto::{sha256, Hash32, Keypair};
use crate::gateway::{serve, GatewayConfig};
use crate::keystore::{Identity, Keystore};
use crate::ledger::{now_ms, read_log, replay, Transaction};
use crate::registry::{
    upload_ref, Agreement, AgreementSignArgs, AgreementTerms, Call, ChainState, DidDocument, DidRegisterArgs,
    DidRevokeArgs, DidUpdateArgs, MediaApproveArgs, MediaIdArgs, MediaRegistration, AGREEMENT_REGISTRY,
    CERTIFICATE_REGISTRY, DID_REGISTRY, MULTIMEDIA_REGISTRY,
};
use crate::rights::AccessRights;
use crate::store::MediaKind;

#[derive(Debug, Parser)]
#[command(name = "mdm", version, about = "Multimedia rights management client and gateway")]
pub struct Cli {
    /// Gateway base URL.
    #[arg(long, global = true, env = "MDM_GATEWAY", default_value = "http://127.0.0.1:8080")]
    pub gateway: String,
    /// Directory holding identity key files.
    #[arg(long, global = true, env = "MDM_KEYSTORE", default_value = "keystore")]
    pub keystore: PathBuf,
    /// Print one JSON object instead of `key: value` lines.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    Owner,
    Provider,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a gateway from a TOML config file.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured port.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Create a new identity in the keystore.
    Keygen {
        name: String,
        /// Derive the key from a seed phrase instead of the OS RNG.
        #[arg(long)]
        seed: Option<String>,
    },
    /// Register the identity's DID with a generated (or given) DID document.
    DidRegister {
        #[arg(long = "as")]
        identity: String,
        /// Contact endpoint listed in the generated document.
        #[arg(long)]
        endpoint: Option<String>,
        /// Register this document file instead of a generated one.
        #[arg(long)]
        ddo: Option<PathBuf>,
    },
    /// Print the DID document bound to a DID.
    DidResolve { did: String },
    /// Replace the identity's DID document.
    DidUpdate {
        #[arg(long = "as")]
        identity: String,
        #[arg(long)]
        ddo: PathBuf,
    },
    /// Permanently revoke the identity's DID.
    DidRevoke {
        #[arg(long = "as")]
        identity: String,
    },
    /// Upload a file off-chain and register it, signing its hash.
    MediaRegister {
        #[arg(long = "as")]
        identity: String,
        #[arg(long)]
        id: String,
        #[arg(long)]
        file: PathBuf,
    },
    /// Approve a registered work under a settled agreement (provider).
    MediaApprove {
        #[arg(long = "as")]
        identity: String,
        #[arg(long)]
        id: String,
        #[arg(long)]
        agreement: String,
    },
    /// Deregister a work (owner).
    MediaDeregister {
        #[arg(long = "as")]
        identity: String,
        #[arg(long)]
        id: String,
    },
    /// Draft an agreement with an owner (provider).
    AgreementGenerate {
        #[arg(long = "as")]
        identity: String,
        #[arg(long)]
        id: String,
        /// Owner DID.
        #[arg(long)]
        owner: String,
        /// Agreement document; uploaded off-chain, its hash goes on chain.
        #[arg(long)]
        document: PathBuf,
        /// Comma-separated rights, e.g. `publication,reproduction`.
        #[arg(long)]
        rights: String,
        /// Validity period in days.
        #[arg(long, default_value_t = 365)]
        valid_days: u64,
    },
    /// Sign an agreement as its owner or provider.
    AgreementSign {
        #[arg(long = "as")]
        identity: String,
        #[arg(long)]
        id: String,
        #[arg(long, value_enum)]
        role: Role,
    },
    /// Request access to a work and receive a token (end user).
    AccessRequest {
        #[arg(long = "as")]
        identity: String,
        #[arg(long)]
        media: String,
        #[arg(long)]
        rights: String,
        /// Token lifetime in seconds, starting now.
        #[arg(long, default_value_t = 3600)]
        duration_secs: u64,
        /// Also write the token to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a token; exits 1 when rejected, naming the failing step.
    TokenVerify {
        #[command(flatten)]
        token: TokenArg,
        /// Verification instant in epoch ms (defaults to the gateway clock).
        #[arg(long)]
        at: Option<u64>,
    },
    /// Redeem a token for the work's content and check its hash.
    Redeem {
        #[command(flatten)]
        token: TokenArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the throughput benchmark against a fresh in-process gateway.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        requests: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// Comma-separated service names.
        #[arg(long)]
        services: Option<String>,
    },
    /// Replay a transaction log on a fresh state and print its root.
    Replay {
        /// NDJSON transaction log; without it the gateway's log is fetched.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Fail unless the replayed root equals this hex value.
        #[arg(long)]
        expect_root: Option<Hash32>,
    },
}

#[derive(Debug, Clone, clap::Args)]
#[group(required = true, multiple = false)]
pub struct TokenArg {
    /// Encoded token.
    #[arg(long)]
    token: Option<String>,
    /// File containing the encoded token.
    #[arg(long)]
    token_file: Option<PathBuf>,
}

impl TokenArg {
    fn read(&self) -> Result<String, CliError> {
        match (&self.token, &self.token_file) {
            (Some(t), _) => Ok(t.trim().to_string()),
            (None, Some(p)) => Ok(std::fs::read_to_string(p)
                .map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?
                .trim()
                .to_string()),
            (None, None) => Err(CliError::new("usage", "give --token or --token-file")),
        }
    }
}

/// A failed command: a stable code, a message and optional extra fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub details: Map<String, Value>,
}

impl CliError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            code: code.into(),
            message: message.into(),
            details: Map::new(),
        }
    }

    fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.details.insert(key.to_string(), value.into());
        self
    }

    pub fn to_json(&self) -> Value {
        let mut obj = self.details.clone();
        obj.insert("error".into(), json!(self.code));
        obj.insert("message".into(), json!(self.message));
        Value::Object(obj)
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        let mut err = CliError::new(e.code(), e.to_string());
        if let ClientError::Api { body: Value::Object(body), .. } = &e {
            for (k, v) in body {
                if k != "error" && k != "message" {
                    err.details.insert(k.clone(), v.clone());
                }
            }
        }
        err
    }
}

macro_rules! impl_from_coded {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new(e.code(), e.to_string())
            }
        }
    )*};
}

impl_from_coded!(
    crate::keystore::KeystoreError,
    crate::gateway::GatewayError
);

impl From<crate::rights::RightsError> for CliError {
    fn from(e: crate::rights::RightsError) -> Self {
        CliError::new("bad-rights", e.to_string())
    }
}

impl From<crate::bench::BenchError> for CliError {
    fn from(e: crate::bench::BenchError) -> Self {
        let code = match &e {
            crate::bench::BenchError::Config(_) => "bad-config",
            crate::bench::BenchError::GatewayUnreachable(_) => "gateway-unreachable",
            crate::bench::BenchError::FixtureExhausted(_) => "fixture-exhausted",
            _ => "bench",
        };
        CliError::new(code, e.to_string())
    }
}

/// Ordered output fields of a successful command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Output(Vec<(String, Value)>);

impl Output {
    fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.push((key.to_string(), value.into()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.0.iter().cloned().collect())
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            match v {
                Value::String(s) if s.contains('\n') => {
                    out.push_str(&format!("{k}:\n{}\n", s.trim_end()));
                }
                Value::String(s) => out.push_str(&format!("{k}: {s}\n")),
                other => out.push_str(&format!("{k}: {other}\n")),
            }
        }
        out
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn receipt_output(receipt: &crate::ledger::Receipt) -> Result<Output, CliError> {
    if !receipt.is_success() {
        let reason = receipt.outcome.reason.clone().unwrap_or_default();
        return Err(CliError::new("reverted", format!("transaction reverted: {reason}"))
            .with("reason", reason)
            .with("tx_hash", receipt.tx_hash.to_hex())
            .with("height", receipt.height));
    }
    Ok(Output::default()
        .with("status", "success")
        .with("tx_hash", receipt.tx_hash.to_hex())
        .with("height", receipt.height))
}

struct Ctx {
    keystore: Keystore,
    client: GatewayClient,
}

impl Ctx {
    fn identity(&self, name: &str) -> Result<Identity, CliError> {
        Ok(self.keystore.load(name)?)
    }

    async fn send(&self, who: &Identity, call: Call) -> Result<Output, CliError> {
        let receipt = self.client.send(&who.keys, &call).await?;
        receipt_output(&receipt)
    }

    async fn record(&self, registry: &str, key: &str) -> Result<Value, CliError> {
        let mut v = self.client.query(registry, key).await?;
        if let Value::Object(map) = &mut v {
            map.remove("height");
        }
        Ok(v)
    }

    async fn agreement(&self, id: &str) -> Result<Agreement, CliError> {
        let v = self.record(AGREEMENT_REGISTRY, id).await?;
        serde_json::from_value(v).map_err(|e| CliError::new("bad-response", e.to_string()))
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns its output.
pub async fn execute(cli: Cli) -> Result<Output, CliError> {
    let ctx = Ctx {
        keystore: Keystore::new(&cli.keystore),
        client: GatewayClient::new(&cli.gateway)?,
    };
    match cli.command {
        Command::Serve { config, port } => {
            let mut config = GatewayConfig::load(&config)?;
            if let Some(port) = port {
                config.port = port;
            }
            serve(config).await?;
            Ok(Output::default().with("status", "stopped"))
        }
        Command::Keygen { name, seed } => {
            let keys = seed.as_deref().map_or_else(Keypair::generate, Keypair::from_seed);
            let id = ctx.keystore.create(&name, keys)?;
            Ok(Output::default()
                .with("name", id.name.clone())
                .with("address", id.address().to_hex())
                .with("did", id.did.clone())
                .with("public_key", id.keys.public_key().to_hex())
                .with("key_file", ctx.keystore.path_of(&name)?.display().to_string()))
        }
        Command::DidRegister { identity, endpoint, ddo } => {
            let me = ctx.identity(&identity)?;
            let ddo = match ddo {
                Some(path) => std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?,
                None => DidDocument::for_key(&me.did, &me.keys.public_key(), endpoint.as_deref()).to_canonical(),
            };
            let call = Call::DidRegister(DidRegisterArgs {
                bound_account: me.address(),
                did: me.did.clone(),
                ddo,
            });
            Ok(ctx.send(&me, call).await?.with("did", me.did))
        }
        Command::DidResolve { did } => {
            let ddo = ctx.client.resolve_did(&did).await?;
            Ok(Output::default().with("did", did).with("ddo", ddo))
        }
        Command::DidUpdate { identity, ddo } => {
            let me = ctx.identity(&identity)?;
            let ddo = std::fs::read_to_string(&ddo).map_err(|e| io_err(&ddo, e))?;
            let call = Call::DidUpdate(DidUpdateArgs {
                did: me.did.clone(),
                ddo,
            });
            Ok(ctx.send(&me, call).await?.with("did", me.did))
        }
        Command::DidRevoke { identity } => {
            let me = ctx.identity(&identity)?;
            let call = Call::DidRevoke(DidRevokeArgs { did: me.did.clone() });
            Ok(ctx.send(&me, call).await?.with("did", me.did))
        }
        Command::MediaRegister { identity, id, file } => {
            let me = ctx.identity(&identity)?;
            let bytes = std::fs::read(&file).map_err(|e| io_err(&file, e))?;
            let content_hash = sha256(&bytes);
            let blob = ctx.client.put_blob(bytes, MediaKind::MultimediaSource).await?;
            if blob.content_hash != content_hash {
                return Err(CliError::new("content-integrity", "store returned a different hash"));
            }
            let call = Call::MediaRegister(MediaRegistration {
                id: id.clone(),
                owner_did: me.did.clone(),
                content_hash,
                owner_sig: me.keys.sign(content_hash.as_bytes()),
                upload_ref: upload_ref(&content_hash),
            });
            Ok(ctx
                .send(&me, call)
                .await?
                .with("multimedia_id", id)
                .with("content_hash", content_hash.to_hex())
                .with("upload_ref", blob.locator))
        }
        Command::MediaApprove {
            identity,
            id,
            agreement,
        } => {
            let me = ctx.identity(&identity)?;
            let agreement = ctx.agreement(&agreement).await?;
            let call = Call::MediaApprove(MediaApproveArgs {
                id: id.clone(),
                provider_did: me.did.clone(),
                agreement_hash: agreement.agreement_hash,
            });
            Ok(ctx.send(&me, call).await?.with("multimedia_id", id))
        }
        Command::MediaDeregister { identity, id } => {
            let me = ctx.identity(&identity)?;
            let call = Call::MediaDeregister(MediaIdArgs { id: id.clone() });
            Ok(ctx.send(&me, call).await?.with("multimedia_id", id))
        }
        Command::AgreementGenerate {
            identity,
            id,
            owner,
            document,
            rights,
            valid_days,
        } => {
            let me = ctx.identity(&identity)?;
            let rights = AccessRights::parse_names(&rights)?;
            let text = std::fs::read(&document).map_err(|e| io_err(&document, e))?;
            let blob = ctx.client.put_blob(text, MediaKind::AgreementDocument).await?;
            let owner_record = ctx.record(DID_REGISTRY, &owner).await?;
            let owner_account = owner_record["owner"]
                .as_str()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::new("bad-response", "owner DID record lacks an owner account"))?;
            let terms = AgreementTerms {
                id: id.clone(),
                owner_did: owner,
                owner_account,
                provider_did: me.did.clone(),
                agreement_hash: blob.content_hash,
                valid_time: valid_days * 24 * 3600,
                copyrights: rights.to_names(),
            };
            Ok(ctx
                .send(&me, Call::AgreementGenerate(terms))
                .await?
                .with("agreement_id", id)
                .with("agreement_hash", blob.content_hash.to_hex())
                .with("copyrights", rights.to_names()))
        }
        Command::AgreementSign { identity, id, role } => {
            let me = ctx.identity(&identity)?;
            let agreement = ctx.agreement(&id).await?;
            let args = AgreementSignArgs {
                id: id.clone(),
                sig: me.keys.sign(&agreement.signing_payload()),
            };
            let call = match role {
                Role::Owner => Call::AgreementOwnerSign(args),
                Role::Provider => Call::AgreementProviderSign(args),
            };
            let out = ctx.send(&me, call).await?;
            let settled = ctx.agreement(&id).await?.settled;
            Ok(out.with("agreement_id", id).with("settled", settled))
        }
        Command::AccessRequest {
            identity,
            media,
            rights,
            duration_secs,
            out,
        } => {
            let me = ctx.identity(&identity)?;
            let rights = AccessRights::parse_names(&rights)?;
            let record = ctx.record(MULTIMEDIA_REGISTRY, &media).await?;
            let provider_did = record["provider_did"]
                .as_str()
                .ok_or_else(|| CliError::new("not-approved", format!("{media} has no provider yet")))?;
            let request = crate::access::TokenRequest {
                owner_did: record["owner_did"].as_str().unwrap_or_default().to_string(),
                provider_did: provider_did.to_string(),
                enduser_did: me.did.clone(),
                multimedia_id: media.clone(),
                rights,
                valid_time: ValidTime::starting_at(now_ms(), duration_secs.saturating_mul(1000)),
            };
            let grant = ctx.client.request_access(&me.keys, request).await?;
            if let Some(path) = &out {
                std::fs::write(path, format!("{}\n", grant.token)).map_err(|e| io_err(path, e))?;
            }
            let mut output = Output::default()
                .with("token", grant.token.clone())
                .with("cert_id", grant.cert_id.to_hex())
                .with("height", grant.receipt.height);
            if let Some(endpoint) = grant.delivery_endpoint {
                output = output.with("delivery_endpoint", endpoint);
            }
            Ok(output)
        }
        Command::TokenVerify { token, at } => {
            let token = token.read()?;
            let resp = ctx.client.verify_token(&token, at).await?;
            let report = resp.report;
            if let Some(step) = report.failed_step {
                let detail = report.steps.last().and_then(|s| s.detail.clone()).unwrap_or_default();
                let name = serde_json::to_value(step).expect("step serializes");
                return Err(CliError::new(
                    "token-rejected",
                    format!("rejected at step {} ({}): {detail}", step.number(), name.as_str().unwrap_or("")),
                )
                .with("failed_step", name)
                .with("step_number", step.number())
                .with("height", resp.height));
            }
            Ok(Output::default()
                .with("outcome", "accept")
                .with("cert_id", report.cert_id.map(|c| c.to_hex()).unwrap_or_default())
                .with("steps_passed", report.steps.len())
                .with("height", resp.height))
        }
        Command::Redeem { token, out } => {
            let token = token.read()?;
            let cert_id = AccessToken::decode(&token)
                .map_err(|e| CliError::new("bad-token", e.to_string()))?
                .cert_id;
            let got = ctx.client.redeem(&token).await?;
            let cert = ctx.record(CERTIFICATE_REGISTRY, &cert_id.to_hex()).await?;
            let onchain: Hash32 = cert["content_hash"]
                .as_str()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::new("bad-response", "certificate lacks content_hash"))?;
            let actual = sha256(&got.content);
            if actual != onchain || actual != got.content_hash {
                return Err(CliError::new(
                    "content-integrity",
                    format!("received content hashes to {actual}, chain records {onchain}"),
                ));
            }
            std::fs::write(&out, &got.content).map_err(|e| io_err(&out, e))?;
            Ok(Output::default()
                .with("multimedia_id", got.multimedia_id)
                .with("content_hash", actual.to_hex())
                .with("onchain_hash", onchain.to_hex())
                .with("bytes", got.content.len())
                .with("saved_to", out.display().to_string()))
        }
        Command::Bench {
            config,
            csv,
            requests,
            batch,
            services,
        } => {
            let mut config = match config {
                Some(path) => BenchConfig::load(&path)?,
                None => BenchConfig::default(),
            };
            if let Some(n) = requests {
                config.total_requests = n;
            }
            if let Some(b) = batch {
                config.batch_size = b;
            }
            if let Some(list) = services {
                config.services = list
                    .split(',')
                    .map(|s| s.trim().parse::<BenchService>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::new("bad-config", e))?;
            }
            let report = run_bench(&config).await?;
            if let Some(path) = &csv {
                emit_csv(&report, path)?;
            }
            let mut out = Output::default()
                .with("table", report.to_table())
                .with("report", serde_json::to_value(&report).expect("report serializes"));
            if let Some(path) = csv {
                out = out.with("csv", path.display().to_string());
            }
            Ok(out)
        }
        Command::Replay { log, expect_root } => {
            let (txs, source): (Vec<Transaction>, String) = match &log {
                Some(path) => {
                    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
                    let txs = read_log(std::io::BufReader::new(file))
                        .map_err(|e| CliError::new("corrupt-log", e.to_string()))?;
                    (txs, path.display().to_string())
                }
                None => (ctx.client.export_chain().await?, ctx.client.base().to_string()),
            };
            let root = replay::<ChainState>(&txs).map_err(|e| CliError::new("corrupt-log", e.to_string()))?;
            let mut out = Output::default()
                .with("source", source)
                .with("transactions", txs.len())
                .with("state_root", root.to_hex());
            if log.is_none() {
                let tip = ctx.client.status().await?.state_root;
                out = out.with("tip_state_root", tip.to_hex()).with("matches_tip", tip == root);
                if tip != root {
                    return Err(CliError::new("root-mismatch", format!("replayed {root}, gateway tip {tip}")));
                }
            }
            if let Some(expected) = expect_root {
                if expected != root {
                    return Err(CliError::new("root-mismatch", format!("replayed {root}, expected {expected}")));
                }
            }
            Ok(out)
        }
    }
}

/// Runs the CLI with process arguments and returns the exit code. Output and
/// errors go to stdout / stderr.
pub async fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let json_mode = cli.json;
    match execute(cli).await {
        Ok(out) => {
            if json_mode {
                println!("{}", out.to_json());
            } else {
                print!("{}", out.to_lines());
            }
            0
        }
        Err(err) => {
            if json_mode {
                println!("{}", err.to_json());
            } else {
                eprintln!("error[{}]: {}", err.code, err.message);
            }
            1
        }
    }
}
