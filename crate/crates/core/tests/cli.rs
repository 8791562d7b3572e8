//! Drives the `mdm` binary against a gateway whose request bodies are
//! recorded, then checks that no keystore secret ever crossed the wire.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Request, State};
use axum::middleware::{from_fn_with_state, Next};
use axum::response::Response;
use serde_json::Value;
use sha2::{Digest, Sha256};

use mdm_core::crypto::Keypair;
use mdm_core::gateway::router;
use mdm_core::keystore::Keystore;
use mdm_core::ledger::ChainConfig;
use mdm_core::service::Platform;
use mdm_core::store::BlobStore;

type Captured = Arc<Mutex<Vec<Vec<u8>>>>;

async fn capture(State(log): State<Captured>, req: Request, next: Next) -> Response {
    let (parts, body) = req.into_parts();
    let bytes = axum::body::to_bytes(body, usize::MAX).await.unwrap();
    let mut entry = parts.uri.to_string().into_bytes();
    entry.push(b' ');
    entry.extend_from_slice(&bytes);
    log.lock().unwrap().push(entry);
    next.run(Request::from_parts(parts, Body::from(bytes))).await
}

struct Harness {
    url: String,
    keystore: PathBuf,
    captured: Captured,
    _rt: tokio::runtime::Runtime,
}

impl Harness {
    fn mdm(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_mdm"))
            .args(["--gateway", &self.url, "--keystore"])
            .arg(&self.keystore)
            .args(args)
            .env_remove("MDM_GATEWAY")
            .env_remove("MDM_KEYSTORE")
            .output()
            .expect("mdm runs")
    }

    /// Runs a command that must succeed and returns its `--json` output.
    fn json(&self, args: &[&str]) -> Value {
        let mut full = vec!["--json"];
        full.extend_from_slice(args);
        let out = self.mdm(&full);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(
            out.status.success(),
            "mdm {args:?} failed: {stdout} {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_str(stdout.trim()).unwrap_or_else(|e| panic!("{args:?}: {e}: {stdout}"))
    }
}

/// Starts a gateway hosting `provider_keys` with body capture, on its own
/// runtime so the test body can block on the CLI.
fn harness(dir: &Path, provider: Keypair) -> Harness {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let captured: Captured = Arc::default();
    let config = ChainConfig {
        block_interval_ms: 50,
        ..ChainConfig::default()
    };
    let store = BlobStore::open(dir.join("store")).unwrap();
    let mut platform = Platform::start(config, Keypair::generate(), store).unwrap();
    platform.host_provider(provider);
    let app = router(Arc::new(platform)).layer(from_fn_with_state(captured.clone(), capture));
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, app).await });
    Harness {
        url,
        keystore: dir.join("keys"),
        captured,
        _rt: rt,
    }
}

fn keygen(keystore: &Path, name: &str) -> Value {
    let out = Command::new(env!("CARGO_BIN_EXE_mdm"))
        .args(["--json", "--keystore"])
        .arg(keystore)
        .args(["keygen", name])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn full_lifecycle_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let keys = dir.path().join("keys");
    let mut generated = Vec::new();
    for name in ["owner", "provider", "enduser"] {
        let v = keygen(&keys, name);
        let file = PathBuf::from(v["key_file"].as_str().unwrap());
        assert!(file.exists(), "key file for {name}");
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            assert_eq!(std::fs::metadata(&file).unwrap().permissions().mode() & 0o777, 0o600);
        }
        generated.push(v);
    }
    assert_eq!(keygen_fails(&keys, "owner"), "identity-exists");

    let store = Keystore::new(&keys);
    let h = harness(dir.path(), store.load("provider").unwrap().keys);

    let mut dids = Vec::new();
    for name in ["owner", "provider", "enduser"] {
        let v = h.json(&["did-register", "--as", name, "--endpoint", &format!("https://{name}.example")]);
        assert_eq!(v["status"], "success");
        assert!(v["did"].as_str().unwrap().starts_with("did:mdm:"));
        dids.push(v["did"].as_str().unwrap().to_string());
    }
    let resolved = h.json(&["did-resolve", &dids[0]]);
    assert!(resolved["ddo"].as_str().unwrap().contains("https://owner.example"));

    let work = dir.path().join("work.bin");
    let content: Vec<u8> = (0..4096u32).map(|i| (i * 7 % 251) as u8).collect();
    std::fs::write(&work, &content).unwrap();
    let reg = h.json(&["media-register", "--as", "owner", "--id", "work", "--file", work.to_str().unwrap()]);
    let expected_hash = hex::encode(Sha256::digest(&content));
    assert_eq!(reg["content_hash"], expected_hash.as_str());

    let terms = dir.path().join("terms.txt");
    std::fs::write(&terms, "publication and performance for one year\n").unwrap();
    h.json(&[
        "agreement-generate", "--as", "provider", "--id", "deal", "--owner", &dids[0], "--document",
        terms.to_str().unwrap(), "--rights", "publication,performance",
    ]);
    let signed = h.json(&["agreement-sign", "--as", "owner", "--id", "deal", "--role", "owner"]);
    assert_eq!(signed["settled"], false);
    let signed = h.json(&["agreement-sign", "--as", "provider", "--id", "deal", "--role", "provider"]);
    assert_eq!(signed["settled"], true);
    h.json(&["media-approve", "--as", "provider", "--id", "work", "--agreement", "deal"]);

    let token_file = dir.path().join("token.txt");
    let granted = h.json(&[
        "access-request", "--as", "enduser", "--media", "work", "--rights", "publication", "--duration-secs",
        "600", "--out", token_file.to_str().unwrap(),
    ]);
    assert_eq!(granted["delivery_endpoint"], "https://enduser.example");
    let token = std::fs::read_to_string(&token_file).unwrap().trim().to_string();
    assert_eq!(granted["token"], token.as_str());

    let verified = h.json(&["token-verify", "--token-file", token_file.to_str().unwrap()]);
    assert_eq!(verified["outcome"], "accept");
    assert_eq!(verified["steps_passed"], 6);

    // Tamper with the signature segment: rejected at the signature match.
    let mut tampered = token.clone().into_bytes();
    let last = tampered.len() - 10;
    tampered[last] = if tampered[last] == b'A' { b'B' } else { b'A' };
    let tampered = String::from_utf8(tampered).unwrap();
    let out = h.mdm(&["token-verify", "--token", &tampered]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[token-rejected]"), "{stderr}");
    assert!(stderr.contains("step 4 (signature-match)"), "{stderr}");
    let out = h.mdm(&["--json", "token-verify", "--token", &tampered]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"], "token-rejected");
    assert_eq!(v["failed_step"], "signature-match");
    assert_eq!(v["step_number"], 4);

    let saved = dir.path().join("redeemed.bin");
    let redeemed = h.json(&["redeem", "--token-file", token_file.to_str().unwrap(), "--out", saved.to_str().unwrap()]);
    assert_eq!(std::fs::read(&saved).unwrap(), content);
    assert_eq!(redeemed["content_hash"], expected_hash.as_str());
    assert_eq!(redeemed["onchain_hash"], expected_hash.as_str());

    let replayed = h.json(&["replay"]);
    assert_eq!(replayed["matches_tip"], true);
    let log = dir.path().join("chain.ndjson");
    std::fs::write(&log, fetch(&format!("{}/v1/chain/export", h.url))).unwrap();
    let from_file = h.json(&["replay", "--log", log.to_str().unwrap(), "--expect-root", replayed["state_root"].as_str().unwrap()]);
    assert_eq!(from_file["state_root"], replayed["state_root"]);

    // Human-readable output and error envelopes.
    let out = h.mdm(&["did-resolve", &dids[1]]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(&format!("did: {}\n", dids[1])));
    let out = h.mdm(&["did-resolve", "did:mdm:0000000000000000000000000000000000000000"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[not-found]"));
    let out = h.mdm(&["--json", "media-register", "--as", "owner", "--id", "work", "--file", work.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"], "reverted");
    assert_eq!(v["reason"], "already-registered");

    // Secrets never leave the client.
    let bodies = h.captured.lock().unwrap();
    assert!(bodies.len() > 15, "captured {} requests", bodies.len());
    for v in &generated {
        let secret = Keystore::new(&keys).load(v["name"].as_str().unwrap()).unwrap().keys.secret_bytes();
        let hex_secret = hex::encode(secret);
        for body in bodies.iter() {
            assert!(!contains(body, hex_secret.as_bytes()), "secret hex sent to the gateway");
            assert!(!contains(body, &secret), "raw secret sent to the gateway");
        }
    }
}

fn keygen_fails(keystore: &Path, name: &str) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_mdm"))
        .args(["--json", "--keystore"])
        .arg(keystore)
        .args(["keygen", name])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["error"].as_str().unwrap().to_string()
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn fetch(url: &str) -> Vec<u8> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async { reqwest::get(url).await.unwrap().bytes().await.unwrap().to_vec() })
}

#[test]
fn unreachable_gateway_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let keys = dir.path().join("keys");
    keygen(&keys, "solo");
    let out = Command::new(env!("CARGO_BIN_EXE_mdm"))
        .args(["--gateway", "http://127.0.0.1:9", "--keystore"])
        .arg(&keys)
        .args(["did-register", "--as", "solo"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[gateway-unreachable]"));
    let out = Command::new(env!("CARGO_BIN_EXE_mdm"))
        .args(["--keystore"])
        .arg(&keys)
        .args(["did-register", "--as", "nobody"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[unknown-identity]"));
}
