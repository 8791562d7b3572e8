//! The whole rights lifecycle against an in-process platform with a running
//! sealer: identities, upload, agreement, approval, access request,
//! verification and redemption.
//!
//! Run with `cargo run --example lifecycle`.

use mdm_core::crypto::Keypair;
use mdm_core::ledger::{now_ms, ChainConfig, Receipt, Transaction};
use mdm_core::access::ValidTime;
use mdm_core::registry::Call;
use mdm_core::rights::{AccessRights, Right};
use mdm_core::scenario::Cast;
use mdm_core::service::{AccessRequest, Platform};
use mdm_core::store::{BlobStore, MediaKind};

async fn send(platform: &Platform, keys: &Keypair, call: Call) -> Receipt {
    let nonce = platform.ledger().next_nonce(&keys.address());
    let tx = Transaction::sign(keys, nonce, call.target(), call.payload());
    let receipt = platform.submit(tx, &call.target(), None).await.expect("accepted into the pool");
    println!(
        "  {:<26} block {:>2}  {}",
        call.target().to_string(),
        receipt.height,
        receipt.outcome.reason.as_deref().unwrap_or("success")
    );
    receipt
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = ChainConfig {
        block_interval_ms: 100,
        ..ChainConfig::default()
    };
    let mut platform = Platform::start(config, Keypair::generate(), BlobStore::open(dir.path())?)?;
    let cast = Cast::from_seed("lifecycle");
    platform.host_provider(cast.provider.keys.clone());

    println!("identities");
    for who in cast.all() {
        send(&platform, &who.keys, who.register_did()).await;
    }

    println!("owner uploads and registers a work");
    let film = b"reel one, reel two".to_vec();
    platform.put_blob(&film, MediaKind::MultimediaSource)?;
    send(&platform, &cast.owner.keys, cast.owner.register_media("film", &film)).await;

    println!("provider and owner settle an agreement");
    let licensed: AccessRights = [Right::Publication, Right::Performance].into_iter().collect();
    let contract = b"the provider may publish and perform the film";
    platform.put_blob(contract, MediaKind::AgreementDocument)?;
    let terms = cast.terms("film-license", contract, licensed);
    let hash = terms.agreement_hash;
    let (owner_sig, provider_sig) = (cast.owner.sign_terms(&terms), cast.provider.sign_terms(&terms));
    send(&platform, &cast.provider.keys, Call::AgreementGenerate(terms)).await;
    send(&platform, &cast.owner.keys, Call::AgreementOwnerSign(owner_sig)).await;
    send(&platform, &cast.provider.keys, Call::AgreementProviderSign(provider_sig)).await;
    send(&platform, &cast.provider.keys, cast.approve("film", hash)).await;

    println!("end user requests access");
    let now = now_ms();
    let window = ValidTime::starting_at(now, 10 * 60 * 1000);
    let greedy = cast.token_request("film", AccessRights::all(), window);
    let refused = platform
        .request_access(&AccessRequest::sign(&cast.enduser.keys, greedy), now)
        .await
        .unwrap_err();
    println!("  all rights -> {}", refused);
    let request = cast.token_request("film", licensed, window);
    let grant = platform
        .request_access(&AccessRequest::sign(&cast.enduser.keys, request), now)
        .await?;
    println!("  granted in block {}: cert {}", grant.receipt.height, grant.cert_id);
    println!("  deliver to {}", grant.delivery_endpoint.as_deref().unwrap_or("-"));

    let (height, report) = platform.verify(&grant.token, now_ms());
    println!("verification at height {height}: {:?}", report.outcome);
    let (_, redeemed) = platform.redeem(&grant.token, now_ms())?;
    println!(
        "redeemed {} bytes of {:?}, hash {}",
        redeemed.bytes.len(),
        redeemed.multimedia_id,
        redeemed.content_hash
    );
    let log = platform.query("multimedia", "film")?.1["access_info"].clone();
    println!("access log: {log}");
    Ok(())
}
