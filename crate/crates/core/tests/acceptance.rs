//! Acceptance run: one PASS / FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs as a plain binary (`harness = false`) so the lines
//! always reach the terminal.
//!
//! Criterion 6 drives the full desk-scale benchmark and takes several
//! minutes. Numeric arguments restrict the run to those criteria, e.g.
//! `cargo test --test acceptance -- 3 7`; without arguments all run.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{Signature as DalekSignature, VerifyingKey};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use sha2::{Digest, Sha256};

use mdm_core::access::{prepare_certificate, verify_token, ValidTime, VerifyStep};
use mdm_core::bench::{run_bench, BenchConfig, BenchService};
use mdm_core::client::{ClientError, GatewayClient};
use mdm_core::crypto::{Hash32, Keypair};
use mdm_core::gateway::spawn;
use mdm_core::ledger::{now_ms, read_log, replay, write_log, ChainConfig, Ledger, Receipt, Transaction};
use mdm_core::registry::{
    AgreementTerms, Call, ChainState, DidRevokeArgs, DidUpdateArgs, LogAccessArgs, MediaIdArgs,
    CERTIFICATE_REGISTRY, DID_REGISTRY, MULTIMEDIA_REGISTRY,
};
use mdm_core::rights::{AccessRights, Right};
use mdm_core::scenario::{Cast, Participant};
use mdm_core::service::Platform;
use mdm_core::store::{BlobStore, MediaKind};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Epoch-ms origin for the hand-driven ledgers.
const T0: u64 = 1_700_000_000_000;

// ---------------------------------------------------------------------------
// Independent oracles. Nothing below calls the crate's encoder, canonical
// byte builder, hasher or verifier.

fn oracle_sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

fn push_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

fn hex_bytes(v: &Value) -> Option<Vec<u8>> {
    let s = v.as_str()?;
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return None;
    }
    hex::decode(s).ok()
}

/// Canonical certificate bytes rebuilt from the JSON `info` object of an
/// on-chain certificate: four length-prefixed strings, the rights mask, the
/// 16-byte window and the owner signature, each length-prefixed.
fn oracle_canonical(info: &Value) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    for key in ["owner_did", "provider_did", "enduser_did", "multimedia_id"] {
        push_field(&mut out, info[key].as_str()?.as_bytes());
    }
    let mask = u8::try_from(info["access_rights"].as_u64()?).ok()?;
    push_field(&mut out, &[mask]);
    let mut window = Vec::with_capacity(16);
    window.extend_from_slice(&info["valid_time"]["not_before"].as_u64()?.to_be_bytes());
    window.extend_from_slice(&info["valid_time"]["not_after"].as_u64()?.to_be_bytes());
    push_field(&mut out, &window);
    push_field(&mut out, &hex_bytes(&info["owner_sig"])?);
    Some(out)
}

/// Signing key listed in a live DID's document, read from the raw record.
fn oracle_did_key(state: &ChainState, did: &str) -> Option<VerifyingKey> {
    let record = state.query(DID_REGISTRY, did).ok()?;
    if record["revoked"].as_bool() != Some(false) {
        return None;
    }
    let ddo: Value = serde_json::from_str(record["ddo"].as_str()?).ok()?;
    if ddo["id"].as_str() != Some(did) {
        return None;
    }
    let key = ddo["publicKey"]
        .as_array()?
        .iter()
        .find_map(|k| k["publicKeyHex"].as_str())?;
    let bytes: [u8; 32] = hex::decode(key).ok()?.try_into().ok()?;
    VerifyingKey::from_bytes(&bytes).ok()
}

fn oracle_sig(bytes: &[u8]) -> Option<DalekSignature> {
    let arr: [u8; 64] = bytes.try_into().ok()?;
    Some(DalekSignature::from_bytes(&arr))
}

/// Re-verifier written from the six-step list. Returns the 1-based number of
/// the first failing step.
fn oracle_verify(state: &ChainState, token: &str, now: u64) -> Result<(), u8> {
    // 1. Decode: three canonical unpadded base64url segments, the fixed
    //    header, a four-field payload in fixed order and a 64-byte signature.
    let parts: Vec<&str> = token.split('.').collect();
    if parts.len() != 3 {
        return Err(1);
    }
    let mut raw = Vec::new();
    for part in &parts {
        let bytes = URL_SAFE_NO_PAD.decode(part).map_err(|_| 1u8)?;
        if URL_SAFE_NO_PAD.encode(&bytes) != *part {
            return Err(1);
        }
        raw.push(bytes);
    }
    if raw[0] != br#"{"ver":1,"alg":"Ed25519"}"# {
        return Err(1);
    }
    let payload: Value = serde_json::from_slice(&raw[1]).map_err(|_| 1u8)?;
    let fields = payload.as_object().ok_or(1u8)?;
    if fields.len() != 4 {
        return Err(1);
    }
    let cert_hex = fields.get("cert_id").and_then(Value::as_str).ok_or(1u8)?;
    let provider = fields.get("provider").and_then(Value::as_str).ok_or(1u8)?;
    let nb = fields.get("not_before").and_then(Value::as_u64).ok_or(1u8)?;
    let na = fields.get("not_after").and_then(Value::as_u64).ok_or(1u8)?;
    if cert_hex.len() != 64 || !cert_hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(1);
    }
    let expected_payload = format!(
        r#"{{"cert_id":"{cert_hex}","provider":{},"not_before":{nb},"not_after":{na}}}"#,
        serde_json::to_string(provider).expect("string serializes")
    );
    if raw[1] != expected_payload.as_bytes() || raw[2].len() != 64 {
        return Err(1);
    }
    let token_sig = &raw[2];

    // 2. Temporal: now inside [not_before, not_after).
    if !(nb <= now && now < na) {
        return Err(2);
    }

    // 3. Lookup.
    let cert = state.query(CERTIFICATE_REGISTRY, cert_hex).map_err(|_| 3u8)?;
    let info = &cert["info"];

    // 4. The token's signature, provider and window equal the on-chain copy.
    let stored_sig = hex_bytes(&cert["provider_sig"]).ok_or(4u8)?;
    if stored_sig != *token_sig
        || info["provider_did"].as_str() != Some(provider)
        || info["valid_time"]["not_before"].as_u64() != Some(nb)
        || info["valid_time"]["not_after"].as_u64() != Some(na)
    {
        return Err(4);
    }

    // 5. Provider signature over the recomposed certificate bytes, under the
    //    provider DID's current key.
    let canonical = oracle_canonical(info).ok_or(5u8)?;
    let provider_key = oracle_did_key(state, provider).ok_or(5u8)?;
    let sig = oracle_sig(token_sig).ok_or(5u8)?;
    provider_key.verify_strict(&canonical, &sig).map_err(|_| 5u8)?;

    // 6. Owner signature over the content hash, under the owner DID's key.
    let owner_key = info["owner_did"]
        .as_str()
        .and_then(|did| oracle_did_key(state, did))
        .ok_or(6u8)?;
    let owner_sig = hex_bytes(&info["owner_sig"]).and_then(|b| oracle_sig(&b)).ok_or(6u8)?;
    let content_hash = hex_bytes(&cert["content_hash"]).ok_or(6u8)?;
    owner_key.verify_strict(&content_hash, &owner_sig).map_err(|_| 6u8)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Hand-driven ledger: one transaction per block, deterministic clock.

struct Driver {
    ledger: Ledger<ChainState>,
    clock: u64,
}

impl Driver {
    fn new() -> Self {
        Driver {
            ledger: Ledger::open(ChainConfig::default(), Keypair::from_seed("acceptance/authority"))
                .expect("in-memory ledger opens"),
            clock: T0,
        }
    }

    fn seal_all(&mut self) {
        while self.ledger.pending() > 0 {
            self.clock += self.ledger.config().block_interval_ms;
            self.ledger.seal_tick(self.clock);
        }
    }

    fn run(&mut self, keys: &Keypair, call: Call) -> Receipt {
        let mut handle = self
            .ledger
            .submit_signed(keys, call.target(), call.payload())
            .expect("pool accepts the transaction");
        self.seal_all();
        handle.try_receipt().expect("sealed transactions have receipts")
    }

    fn ok(&mut self, keys: &Keypair, call: Call) -> Result<(), String> {
        let label = call.target().to_string();
        let receipt = self.run(keys, call);
        ensure!(receipt.is_success(), "setup {label} reverted: {:?}", receipt.outcome.reason);
        Ok(())
    }

    fn root(&self) -> Hash32 {
        self.ledger.snapshot().state_root
    }

    fn state(&self) -> ChainState {
        self.ledger.snapshot().state.clone()
    }
}

/// Registers DIDs for the cast, one work for the owner, and a settled
/// agreement covering `rights`; approves the work under it.
fn settle_and_approve(d: &mut Driver, cast: &Cast, media: &str, content: &[u8], rights: AccessRights) -> Result<AgreementTerms, String> {
    d.ok(&cast.owner.keys, cast.owner.register_media(media, content))?;
    let terms = cast.terms(&format!("{media}-license"), format!("license for {media}").as_bytes(), rights);
    d.ok(&cast.provider.keys, Call::AgreementGenerate(terms.clone()))?;
    d.ok(&cast.owner.keys, Call::AgreementOwnerSign(cast.owner.sign_terms(&terms)))?;
    d.ok(&cast.provider.keys, Call::AgreementProviderSign(cast.provider.sign_terms(&terms)))?;
    d.ok(&cast.provider.keys, cast.approve(media, terms.agreement_hash))?;
    Ok(terms)
}

fn register_cast(d: &mut Driver, cast: &Cast) -> Result<(), String> {
    for who in cast.all() {
        d.ok(&who.keys, who.register_did())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 1: end-to-end lifecycle over HTTP with 1 s blocks.

struct LifecycleRun {
    log: Vec<Transaction>,
    tip_root: Hash32,
}

async fn criterion_1() -> Result<(String, LifecycleRun), String> {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ChainConfig::default();
    ensure!(config.block_interval_ms == 1000, "default block interval is {} ms", config.block_interval_ms);
    let cast = Cast::from_seed("acceptance/lifecycle");
    let store = BlobStore::open(dir.path()).map_err(|e| e.to_string())?;
    let mut platform = Platform::start(config, Keypair::from_seed("acceptance/sealer"), store).map_err(|e| e.to_string())?;
    platform.host_provider(cast.provider.keys.clone());
    let gateway = spawn(Arc::new(platform), "127.0.0.1:0".parse().unwrap())
        .await
        .map_err(|e| e.to_string())?;
    let client = GatewayClient::new(&gateway.url()).map_err(|e| e.to_string())?;
    let e = |err: ClientError| err.to_string();

    let send = |who: &Participant, call: Call| {
        let client = client.clone();
        let keys = who.keys.clone();
        async move {
            let label = call.target().to_string();
            let receipt = client.send(&keys, &call).await.map_err(|err| err.to_string())?;
            ensure!(receipt.is_success(), "{label} reverted: {:?}", receipt.outcome.reason);
            Ok::<Receipt, String>(receipt)
        }
    };

    for who in cast.all() {
        send(who, who.register_did()).await?;
    }
    for who in cast.all() {
        let Call::DidRegister(args) = who.register_did() else { unreachable!() };
        let resolved = client.resolve_did(&who.did).await.map_err(e)?;
        ensure!(resolved == args.ddo, "{} resolves to a different document", who.did);
    }

    let content = b"lifecycle acceptance work: 24 frames of test pattern".to_vec();
    let blob = client.put_blob(content.clone(), MediaKind::MultimediaSource).await.map_err(e)?;
    send(&cast.owner, cast.owner.register_media("work", &content)).await?;

    let document = b"The provider may publish and perform the work for one year.".to_vec();
    let doc_blob = client.put_blob(document.clone(), MediaKind::AgreementDocument).await.map_err(e)?;
    let rights: AccessRights = [Right::Publication, Right::Performance].into_iter().collect();
    let terms = cast.terms("work-license", &document, rights);
    ensure!(terms.agreement_hash == doc_blob.content_hash, "agreement hash differs from stored document hash");
    send(&cast.provider, Call::AgreementGenerate(terms.clone())).await?;
    send(&cast.owner, Call::AgreementOwnerSign(cast.owner.sign_terms(&terms))).await?;
    send(&cast.provider, Call::AgreementProviderSign(cast.provider.sign_terms(&terms))).await?;
    let agreement = client.query("agreement", "work-license").await.map_err(e)?;
    ensure!(agreement["settled"] == Value::Bool(true), "agreement not settled: {agreement}");
    send(&cast.provider, cast.approve("work", terms.agreement_hash)).await?;

    let request = cast.token_request("work", rights, ValidTime::starting_at(now_ms(), 10 * 60 * 1000));
    let grant = client.request_access(&cast.enduser.keys, request).await.map_err(e)?;
    ensure!(grant.receipt.is_success(), "issuance reverted");

    let verdict = client.verify_token(&grant.token, None).await.map_err(e)?;
    let report = &verdict.report;
    ensure!(report.accepted(), "token rejected: {report:?}");
    let steps: Vec<VerifyStep> = report.steps.iter().filter(|s| s.passed).map(|s| s.step).collect();
    ensure!(steps == VerifyStep::ORDER, "passed steps {steps:?}");

    let redeemed = client.redeem(&grant.token).await.map_err(e)?;
    let record = client.query(MULTIMEDIA_REGISTRY, "work").await.map_err(e)?;
    let onchain = record["content_hash"].as_str().unwrap_or_default().to_string();
    let received = hex::encode(oracle_sha256(&redeemed.content));
    ensure!(redeemed.content == content, "redeemed bytes differ from the upload");
    ensure!(received == onchain, "received hash {received} != on-chain {onchain}");
    ensure!(blob.content_hash.to_hex() == onchain, "upload hash differs from on-chain hash");

    let log = client.export_chain().await.map_err(e)?;
    let status = client.status().await.map_err(e)?;
    gateway.shutdown().await.map_err(|err| err.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();
    ensure!(elapsed < 30.0, "lifecycle took {elapsed:.1} s");
    Ok((
        format!(
            "{} blocks, {} transactions, six steps passed, content hash {}.., {elapsed:.1} s",
            status.height,
            log.len(),
            &onchain[..12]
        ),
        LifecycleRun {
            log,
            tip_root: status.state_root,
        },
    ))
}

// ---------------------------------------------------------------------------
// Criterion 2: access-control matrix.

fn criterion_2() -> Outcome {
    let mut d = Driver::new();
    let cast = Cast::from_seed("acceptance/matrix");
    let outsider = Participant::from_seed("acceptance/matrix/outsider");
    register_cast(&mut d, &cast)?;
    let all = AccessRights::all();
    let first = settle_and_approve(&mut d, &cast, "m1", b"first work", all)?;
    d.ok(&cast.owner.keys, cast.owner.register_media("m2", b"second work"))?;
    let draft = cast.terms("a2", b"unsigned draft", all);
    d.ok(&cast.provider.keys, Call::AgreementGenerate(draft.clone()))?;

    let window = ValidTime::starting_at(T0, 1_000_000_000);
    let issued = prepare_certificate(&d.state(), &cast.provider.keys, &cast.token_request("m1", all, window), d.clock)
        .map_err(|e| e.to_string())?;
    d.ok(&cast.provider.keys, Call::IssueCert(issued.issue.clone()))?;
    let other_window = ValidTime::starting_at(T0 + 1, 1_000_000_000);
    let fresh = prepare_certificate(&d.state(), &cast.provider.keys, &cast.token_request("m1", all, other_window), d.clock)
        .map_err(|e| e.to_string())?;

    let (o, p) = (&cast.owner, &cast.provider);
    let ops: Vec<(&str, Call, &Participant)> = vec![
        (
            "updateDDO",
            Call::DidUpdate(DidUpdateArgs {
                did: o.did.clone(),
                ddo: o.document(Some("https://moved.example/owner")).to_canonical(),
            }),
            o,
        ),
        ("ownerSign", Call::AgreementOwnerSign(o.sign_terms(&draft)), o),
        ("providerSign", Call::AgreementProviderSign(p.sign_terms(&draft)), p),
        ("approve", cast.approve("m2", first.agreement_hash), p),
        ("issue_cert", Call::IssueCert(fresh.issue.clone()), p),
        (
            "log_access",
            Call::MediaLogAccess(LogAccessArgs {
                id: "m1".into(),
                cert_id: issued.token.cert_id,
            }),
            p,
        ),
        ("deregister", Call::MediaDeregister(MediaIdArgs { id: "m1".into() }), o),
        ("revoke", Call::DidRevoke(DidRevokeArgs { did: o.did.clone() }), o),
    ];
    let callers = [&cast.owner, &cast.provider, &cast.enduser, &outsider];

    let mut cases = 0;
    let mut false_accepts = Vec::new();
    let mut root_changes = Vec::new();
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    for (name, call, authorized) in &ops {
        for caller in callers.iter().filter(|c| c.keys.address() != authorized.keys.address()) {
            cases += 1;
            let before = d.root();
            let receipt = d.run(&caller.keys, call.clone());
            if receipt.is_success() {
                false_accepts.push(format!("{name} by {}", caller.name));
            }
            if d.root() != before {
                root_changes.push(format!("{name} by {}", caller.name));
            }
            *reasons.entry(receipt.outcome.reason.unwrap_or_default()).or_default() += 1;
        }
    }
    ensure!(false_accepts.is_empty(), "false accepts: {false_accepts:?}");
    ensure!(root_changes.is_empty(), "state root moved: {root_changes:?}");
    ensure!(cases == ops.len() * 3, "covered {cases} cases");

    // Positive controls: each operation is reachable by its authorized caller,
    // so the reverts above are attributable to the caller.
    for (name, call, authorized) in ops {
        let receipt = d.run(&authorized.keys, call);
        let reason = receipt.outcome.reason.clone().unwrap_or_default();
        let expected_ok = name != "log_access";
        if expected_ok {
            ensure!(receipt.is_success(), "authorized {name} reverted: {reason}");
        } else {
            ensure!(reason == "already-logged", "authorized log_access gave {reason:?}");
        }
    }
    Ok(format!(
        "{cases} unauthorized cases over {} operations, 0 accepts, root unchanged; reasons {reasons:?}",
        8
    ))
}

// ---------------------------------------------------------------------------
// Criterion 3: token soundness under single-byte mutation.

fn issued_token_fixture(seed: &str, window: ValidTime) -> Result<(ChainState, String), String> {
    let mut d = Driver::new();
    let cast = Cast::from_seed(seed);
    register_cast(&mut d, &cast)?;
    let rights: AccessRights = [Right::Publication, Right::Exhibition].into_iter().collect();
    settle_and_approve(&mut d, &cast, "work", b"mutation target", rights)?;
    let prepared = prepare_certificate(&d.state(), &cast.provider.keys, &cast.token_request("work", rights, window), T0)
        .map_err(|e| e.to_string())?;
    d.ok(&cast.provider.keys, Call::IssueCert(prepared.issue.clone()))?;
    Ok((d.state(), prepared.token.encode()))
}

fn criterion_3() -> Outcome {
    let window = ValidTime::starting_at(T0 + 60_000, 3_600_000);
    let (state, token) = issued_token_fixture("acceptance/mutation", window)?;
    let inside = window.not_before + 1_000;
    ensure!(oracle_verify(&state, &token, inside).is_ok(), "oracle rejects the genuine token");
    ensure!(verify_token(&state, &token, inside).accepted(), "verifier rejects the genuine token");

    let mut alphabet: Vec<u8> = (b'A'..=b'Z').chain(b'a'..=b'z').chain(b'0'..=b'9').collect();
    alphabet.extend_from_slice(b"-_.=+/ \"{}:,\\");
    alphabet.push(0x7f);
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let bytes = token.as_bytes();
    let mut mutants: Vec<String> = Vec::new();
    for i in 0..bytes.len() {
        for &b in &alphabet {
            if b != bytes[i] {
                let mut m = bytes.to_vec();
                m[i] = b;
                mutants.push(String::from_utf8(m).expect("ascii"));
            }
        }
    }
    let exhaustive = mutants.len();
    for _ in 0..2_000 {
        let i = rng.gen_range(0..bytes.len());
        let b = rng.gen_range(0u8..=0x7f);
        if b != bytes[i] {
            let mut m = bytes.to_vec();
            m[i] = b;
            mutants.push(String::from_utf8(m).expect("ascii"));
        }
    }

    let mut accepted = Vec::new();
    let mut disagreements = Vec::new();
    let mut by_step: BTreeMap<usize, usize> = BTreeMap::new();
    for m in &mutants {
        let report = verify_token(&state, m, inside);
        let oracle = oracle_verify(&state, m, inside);
        if report.accepted() || oracle.is_ok() {
            accepted.push(m.clone());
            continue;
        }
        let step = report.failed_step.map(VerifyStep::number).unwrap_or(0);
        if oracle != Err(step as u8) {
            disagreements.push(format!("verifier step {step}, oracle {oracle:?}"));
        }
        *by_step.entry(step).or_default() += 1;
    }
    ensure!(accepted.is_empty(), "{} mutants accepted, first {:?}", accepted.len(), accepted.first());
    ensure!(disagreements.is_empty(), "{} step disagreements, first {:?}", disagreements.len(), disagreements.first());

    let mut instants = vec![window.not_before, window.not_before + 1, window.not_after - 1];
    instants.extend((0..500).map(|_| rng.gen_range(window.not_before..window.not_after)));
    for &t in &instants {
        ensure!(verify_token(&state, &token, t).accepted(), "verifier rejects at {t}");
        ensure!(oracle_verify(&state, &token, t).is_ok(), "oracle rejects at {t}");
    }
    for t in [window.not_after, window.not_after + 1, window.not_before - 1] {
        let report = verify_token(&state, &token, t);
        ensure!(report.failed_step == Some(VerifyStep::Temporal), "at {t}: {:?}", report.failed_step);
        ensure!(oracle_verify(&state, &token, t) == Err(2), "oracle accepts at {t}");
    }
    Ok(format!(
        "{} mutants ({exhaustive} exhaustive + {} random) all rejected, failing steps {by_step:?} match oracle; accepted at {} in-window instants, rejected at not_after",
        mutants.len(),
        mutants.len() - exhaustive,
        instants.len()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 4: certificate id recomputation.

fn criterion_4() -> Outcome {
    let mut d = Driver::new();
    let cast = Cast::from_seed("acceptance/certid");
    register_cast(&mut d, &cast)?;
    let endusers: Vec<Participant> = (0..5)
        .map(|i| Participant::from_seed(&format!("acceptance/certid/enduser-{i}")))
        .collect();
    for u in &endusers {
        d.ok(&u.keys, u.register_did())?;
    }
    let media: Vec<String> = (0..4).map(|i| format!("work-{i}")).collect();
    for (i, id) in media.iter().enumerate() {
        settle_and_approve(&mut d, &cast, id, format!("content {i}").as_bytes(), AccessRights::all())?;
    }

    let state = d.state();
    let mut rng = StdRng::seed_from_u64(4);
    let mut expected = Vec::new();
    for _ in 0..100 {
        let mut req = cast.token_request(
            &media[rng.gen_range(0..media.len())],
            AccessRights::from_mask(rng.gen_range(1..=AccessRights::MASK)).expect("mask in range"),
            ValidTime::starting_at(T0 + rng.gen_range(0..1_000_000_000), rng.gen_range(1..100_000_000)),
        );
        req.enduser_did = endusers[rng.gen_range(0..endusers.len())].did.clone();
        let prepared = prepare_certificate(&state, &cast.provider.keys, &req, T0).map_err(|e| e.to_string())?;
        d.ledger
            .submit_signed(&cast.provider.keys, Call::IssueCert(prepared.issue.clone()).target(), Call::IssueCert(prepared.issue).payload())
            .map_err(|e| e.to_string())?;
        expected.push(prepared.token.cert_id);
    }
    d.seal_all();

    let state = d.state();
    let mut matches = 0;
    for id in &expected {
        let cert = state
            .query(CERTIFICATE_REGISTRY, &id.to_hex())
            .map_err(|_| format!("certificate {id} not stored"))?;
        let canonical = oracle_canonical(&cert["info"]).ok_or("certificate fields missing")?;
        let recomputed = hex::encode(oracle_sha256(&canonical));
        ensure!(cert["cert_id"].as_str() == Some(recomputed.as_str()), "stored {} != recomputed {recomputed}", cert["cert_id"]);
        ensure!(recomputed == id.to_hex(), "lookup key {id} != recomputed {recomputed}");
        matches += 1;
    }
    ensure!(state.certificates.len() == 100, "{} certificates stored", state.certificates.len());
    Ok(format!("{matches}/100 random issuances recompute to their stored cert id"))
}

// ---------------------------------------------------------------------------
// Criterion 5: replay of the criterion-1 log.

fn criterion_5(run: &LifecycleRun) -> Outcome {
    ensure!(!run.log.is_empty(), "empty log");
    let mut ndjson = Vec::new();
    write_log(&mut ndjson, &run.log).map_err(|e| e.to_string())?;
    let parsed = read_log(ndjson.as_slice()).map_err(|e| e.to_string())?;
    ensure!(parsed == run.log, "NDJSON round trip changed the log");
    let replayed = replay::<ChainState>(&parsed).map_err(|e| e.to_string())?;

    let fresh: Ledger<ChainState> =
        Ledger::open(ChainConfig::default(), Keypair::from_seed("acceptance/replayer")).map_err(|e| e.to_string())?;
    let mut handles = Vec::new();
    for tx in parsed {
        handles.push(fresh.submit(tx).map_err(|e| e.to_string())?);
    }
    let mut clock = 0;
    while fresh.pending() > 0 {
        clock += 1000;
        fresh.seal_tick(clock);
    }
    let fresh_root = fresh.snapshot().state_root;
    let tip = run.tip_root.to_hex();
    ensure!(replayed.to_hex() == tip, "replayed root {replayed} != tip {tip}");
    ensure!(fresh_root.to_hex() == tip, "fresh ledger root {fresh_root} != tip {tip}");
    let mut reverted = 0;
    for mut h in handles {
        if !h.try_receipt().ok_or("missing receipt")?.is_success() {
            reverted += 1;
        }
    }
    Ok(format!(
        "{} transactions ({} bytes NDJSON, {reverted} reverted) replay to {}..",
        run.log.len(),
        ndjson.len(),
        &tip[..16]
    ))
}

// ---------------------------------------------------------------------------
// Criterion 6: throughput ordering at desk-scale defaults.

async fn criterion_6() -> Outcome {
    let config = BenchConfig::default();
    let report = run_bench(&config).await.map_err(|e| e.to_string())?;
    print!("{}", report.to_table());
    ensure!(report.total_errors() == 0, "{} request errors", report.total_errors());
    let ceiling = report.write_ceiling_tps();
    let mut max_write: f64 = 0.0;
    for svc in BenchService::ALL.iter().filter(|s| !s.is_read()) {
        let r = report.service(*svc).ok_or(format!("{} missing", svc.name()))?;
        ensure!(r.tps <= ceiling * 1.1, "{} at {:.1} tps exceeds the {ceiling:.0} tps ceiling", svc.name(), r.tps);
        max_write = max_write.max(r.tps);
    }
    let mut ratios = Vec::new();
    for svc in [BenchService::DidResolution, BenchService::TokenVerification] {
        let r = report.service(svc).ok_or(format!("{} missing", svc.name()))?;
        ensure!(r.blocks_sealed == 0, "{} sealed {} blocks", svc.name(), r.blocks_sealed);
        ensure!(r.tps >= 2.0 * max_write, "{} at {:.1} tps is under twice {max_write:.1}", svc.name(), r.tps);
        ratios.push(format!("{} {:.0}x", svc.name(), r.tps / max_write));
    }
    Ok(format!(
        "max write {max_write:.1} tps (ceiling {ceiling:.0}), {}",
        ratios.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// Criterion 7: one-shot registry semantics.

fn criterion_7() -> Outcome {
    let mut d = Driver::new();
    let cast = Cast::from_seed("acceptance/oneshot");
    register_cast(&mut d, &cast)?;
    let mut checks = Vec::new();
    let mut expect = |d: &mut Driver, label: &str, keys: &Keypair, call: Call, code: &str| -> Result<(), String> {
        let before = d.root();
        let receipt = d.run(keys, call);
        let reason = receipt.outcome.reason.unwrap_or_default();
        ensure!(reason == code, "{label}: expected revert {code:?}, got {reason:?}");
        ensure!(d.root() == before, "{label}: state root moved");
        checks.push(format!("{label} -> {code}"));
        Ok(())
    };

    expect(&mut d, "duplicate DID registration", &cast.owner.keys, cast.owner.register_did(), "already-registered")?;

    d.ok(&cast.owner.keys, cast.owner.register_media("work", b"one-shot"))?;
    expect(&mut d, "duplicate multimedia registration", &cast.owner.keys, cast.owner.register_media("work", b"one-shot"), "already-registered")?;

    let rights = AccessRights::all();
    let terms = cast.terms("deal", b"one-shot terms", rights);
    d.ok(&cast.provider.keys, Call::AgreementGenerate(terms.clone()))?;
    d.ok(&cast.owner.keys, Call::AgreementOwnerSign(cast.owner.sign_terms(&terms)))?;
    expect(&mut d, "double owner-sign", &cast.owner.keys, Call::AgreementOwnerSign(cast.owner.sign_terms(&terms)), "double-sign")?;
    d.ok(&cast.provider.keys, Call::AgreementProviderSign(cast.provider.sign_terms(&terms)))?;
    expect(&mut d, "duplicate settlement (provider re-sign)", &cast.provider.keys, Call::AgreementProviderSign(cast.provider.sign_terms(&terms)), "already-settled")?;
    expect(&mut d, "duplicate settlement (regenerate)", &cast.provider.keys, Call::AgreementGenerate(terms.clone()), "already-settled")?;

    d.ok(&cast.provider.keys, cast.approve("work", terms.agreement_hash))?;
    let prepared = prepare_certificate(&d.state(), &cast.provider.keys, &cast.token_request("work", rights, ValidTime::starting_at(T0, 1_000_000_000)), d.clock)
        .map_err(|e| e.to_string())?;
    d.ok(&cast.provider.keys, Call::IssueCert(prepared.issue.clone()))?;
    expect(&mut d, "duplicate certificate issuance", &cast.provider.keys, Call::IssueCert(prepared.issue), "already-issued")?;

    let user = &cast.enduser;
    d.ok(&user.keys, Call::DidRevoke(DidRevokeArgs { did: user.did.clone() }))?;
    expect(&mut d, "post-revoke DID re-registration", &user.keys, user.register_did(), "already-registered")?;
    Ok(checks.join("; "))
}

// ---------------------------------------------------------------------------
// Criterion 8: off-chain integrity on redeem.

async fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = ChainConfig {
        block_interval_ms: 20,
        ..ChainConfig::default()
    };
    let cast = Cast::from_seed("acceptance/integrity");
    let store = BlobStore::open(dir.path()).map_err(|e| e.to_string())?;
    let mut platform = Platform::start(config, Keypair::from_seed("acceptance/sealer"), store).map_err(|e| e.to_string())?;
    platform.host_provider(cast.provider.keys.clone());
    let gateway = spawn(Arc::new(platform), "127.0.0.1:0".parse().unwrap())
        .await
        .map_err(|e| e.to_string())?;
    let client = GatewayClient::new(&gateway.url()).map_err(|e| e.to_string())?;
    let send = |keys: &Keypair, call: Call| {
        let (client, keys) = (client.clone(), keys.clone());
        async move {
            let r = client.send(&keys, &call).await.map_err(|e| e.to_string())?;
            ensure!(r.is_success(), "setup reverted: {:?}", r.outcome.reason);
            Ok::<(), String>(())
        }
    };
    for who in cast.all() {
        send(&who.keys, who.register_did()).await?;
    }
    let content: Vec<u8> = (0u8..=255).collect();
    let blob = client.put_blob(content.clone(), MediaKind::MultimediaSource).await.map_err(|e| e.to_string())?;
    send(&cast.owner.keys, cast.owner.register_media("work", &content)).await?;
    let rights: AccessRights = [Right::Reproduction].into_iter().collect();
    let terms = cast.terms("deal", b"integrity terms", rights);
    send(&cast.provider.keys, Call::AgreementGenerate(terms.clone())).await?;
    send(&cast.owner.keys, Call::AgreementOwnerSign(cast.owner.sign_terms(&terms))).await?;
    send(&cast.provider.keys, Call::AgreementProviderSign(cast.provider.sign_terms(&terms))).await?;
    send(&cast.provider.keys, cast.approve("work", terms.agreement_hash)).await?;
    let request = cast.token_request("work", rights, ValidTime::starting_at(now_ms(), 10 * 60 * 1000));
    let grant = client.request_access(&cast.enduser.keys, request).await.map_err(|e| e.to_string())?;
    ensure!(client.redeem(&grant.token).await.is_ok(), "intact content does not redeem");

    let platform = Arc::clone(gateway.platform());
    let path = platform.store().path_of(&blob.content_hash);
    let original = std::fs::read(&path).map_err(|e| e.to_string())?;
    let mut rejected = 0;
    for i in 0..original.len() {
        let mut corrupted = original.clone();
        corrupted[i] ^= 0x01;
        std::fs::write(&path, &corrupted).map_err(|e| e.to_string())?;
        match platform.redeem(&grant.token, now_ms()) {
            Err(e) if e.code() == "content-integrity" => rejected += 1,
            Err(e) => return Err(format!("byte {i}: {} instead of content-integrity", e.code())),
            Ok(_) => return Err(format!("byte {i}: corrupted content delivered")),
        }
    }
    let mut corrupted = original.clone();
    corrupted[original.len() / 2] ^= 0x80;
    std::fs::write(&path, &corrupted).map_err(|e| e.to_string())?;
    let http = match client.redeem(&grant.token).await {
        Err(ClientError::Api { status, code, .. }) if code == "content-integrity" => status,
        other => return Err(format!("HTTP redeem of corrupted blob gave {other:?}")),
    };
    std::fs::write(&path, &original).map_err(|e| e.to_string())?;
    ensure!(client.redeem(&grant.token).await.is_ok(), "restored content does not redeem");
    gateway.shutdown().await.map_err(|e| e.to_string())?;
    Ok(format!(
        "{rejected}/{} single-byte corruptions refused with content-integrity; HTTP {http}",
        original.len()
    ))
}

// ---------------------------------------------------------------------------

fn report(number: usize, title: &str, result: std::thread::Result<Outcome>) -> bool {
    let outcome = result.unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match &outcome {
        Ok(detail) => println!("PASS criterion {number} {title}: {detail}"),
        Err(why) => println!("FAIL criterion {number} {title}: {why}"),
    }
    outcome.is_ok()
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let mut passed = Vec::new();

    let mut lifecycle = None;
    if wanted(1) || wanted(5) {
        let r1 = catch_unwind(AssertUnwindSafe(|| {
            rt.block_on(criterion_1()).map(|(detail, run)| {
                lifecycle = Some(run);
                detail
            })
        }));
        passed.push(report(1, "end-to-end lifecycle", r1));
    }
    if wanted(2) {
        passed.push(report(2, "access-control matrix", catch_unwind(criterion_2)));
    }
    if wanted(3) {
        passed.push(report(3, "token soundness by mutation", catch_unwind(criterion_3)));
    }
    if wanted(4) {
        passed.push(report(4, "cert id determinism", catch_unwind(criterion_4)));
    }
    if wanted(5) {
        let r5 = match &lifecycle {
            Some(run) => catch_unwind(AssertUnwindSafe(|| criterion_5(run))),
            None => Ok(Err("criterion 1 produced no log".to_string())),
        };
        passed.push(report(5, "replay determinism", r5));
    }
    if wanted(6) {
        let r6 = catch_unwind(AssertUnwindSafe(|| rt.block_on(criterion_6())));
        passed.push(report(6, "throughput ordering", r6));
    }
    if wanted(7) {
        passed.push(report(7, "one-shot registry semantics", catch_unwind(criterion_7)));
    }
    if wanted(8) {
        let r8 = catch_unwind(AssertUnwindSafe(|| rt.block_on(criterion_8())));
        passed.push(report(8, "off-chain integrity", r8));
    }

    let failed = passed.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", passed.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
