//! Starts the HTTP gateway on a free port and drives it with the typed
//! client, the same way the `mdm` CLI does. Keys never leave this process;
//! only signed transactions and requests travel.
//!
//! Run with `cargo run --example gateway`.

use std::sync::Arc;

use mdm_core::access::ValidTime;
use mdm_core::client::GatewayClient;
use mdm_core::crypto::Keypair;
use mdm_core::gateway::spawn;
use mdm_core::ledger::{now_ms, ChainConfig};
use mdm_core::registry::Call;
use mdm_core::rights::{AccessRights, Right};
use mdm_core::scenario::Cast;
use mdm_core::service::Platform;
use mdm_core::store::{BlobStore, MediaKind};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = ChainConfig {
        block_interval_ms: 100,
        ..ChainConfig::default()
    };
    let cast = Cast::from_seed("gateway");
    let mut platform = Platform::start(config, Keypair::generate(), BlobStore::open(dir.path())?)?;
    platform.host_provider(cast.provider.keys.clone());
    let gateway = spawn(Arc::new(platform), "127.0.0.1:0".parse()?).await?;
    println!("gateway at {}", gateway.url());
    let client = GatewayClient::new(&gateway.url())?;

    for who in cast.all() {
        let receipt = client.send(&who.keys, &who.register_did()).await?;
        println!("registered {} in block {}", who.did, receipt.height);
    }
    println!("resolved owner DDO:\n{}", client.resolve_did(&cast.owner.did).await?);

    let song = b"verse chorus verse".to_vec();
    let blob = client.put_blob(song.clone(), MediaKind::MultimediaSource).await?;
    println!("uploaded to {}", blob.locator);
    client.send(&cast.owner.keys, &cast.owner.register_media("song", &song)).await?;

    let rights: AccessRights = [Right::Publication].into_iter().collect();
    let terms = cast.terms("song-license", b"publish only", rights);
    let hash = terms.agreement_hash;
    let owner_sig = Call::AgreementOwnerSign(cast.owner.sign_terms(&terms));
    let provider_sig = Call::AgreementProviderSign(cast.provider.sign_terms(&terms));
    client.send(&cast.provider.keys, &Call::AgreementGenerate(terms)).await?;
    client.send(&cast.owner.keys, &owner_sig).await?;
    client.send(&cast.provider.keys, &provider_sig).await?;
    let approved = client.send(&cast.provider.keys, &cast.approve("song", hash)).await?;
    println!("approved in block {}", approved.height);

    let duplicate = client.send(&cast.owner.keys, &cast.owner.register_media("song", &song)).await?;
    println!("duplicate registration -> {:?}", duplicate.outcome.reason);

    let request = cast.token_request("song", rights, ValidTime::starting_at(now_ms(), 60_000));
    let grant = client.request_access(&cast.enduser.keys, request).await?;
    println!("token {}", grant.token);

    let verdict = client.verify_token(&grant.token, None).await?;
    println!("verify at height {}: {:?}", verdict.height, verdict.report.outcome);
    let garbage = client.verify_token("garbage", None).await?;
    println!("verify garbage: {:?} at {:?}", garbage.report.outcome, garbage.report.failed_step);

    let redeemed = client.redeem(&grant.token).await?;
    println!("redeemed {:?}: {} bytes", redeemed.multimedia_id, redeemed.content.len());
    let status = client.status().await?;
    println!("tip height {} root {}", status.height, status.state_root);

    gateway.shutdown().await?;
    Ok(())
}
