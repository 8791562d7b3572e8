//! Drives a ledger by hand, exports its committed transaction log, writes it
//! to NDJSON and replays it into a fresh state with the same root.
//!
//! Run with `cargo run --example replay`.

use mdm_core::crypto::Keypair;
use mdm_core::ledger::{read_log, replay, write_log, ChainConfig, Ledger};
use mdm_core::registry::{Call, ChainState};
use mdm_core::rights::AccessRights;
use mdm_core::scenario::Cast;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ChainConfig {
        block_capacity: 4,
        ..ChainConfig::default()
    };
    let ledger: Ledger<ChainState> = Ledger::open(config, Keypair::from_seed("example/authority"))?;
    let cast = Cast::from_seed("replay");
    let terms = cast.terms("deal", b"contract text", AccessRights::all());

    let mut calls: Vec<(&Keypair, Call)> = cast.all().iter().map(|p| (&p.keys, p.register_did())).collect();
    calls.push((&cast.owner.keys, cast.owner.register_media("clip", b"frames")));
    calls.push((&cast.owner.keys, cast.owner.register_media("clip", b"frames")));
    calls.push((&cast.provider.keys, Call::AgreementGenerate(terms.clone())));
    calls.push((&cast.owner.keys, Call::AgreementOwnerSign(cast.owner.sign_terms(&terms))));
    calls.push((&cast.provider.keys, Call::AgreementProviderSign(cast.provider.sign_terms(&terms))));
    calls.push((&cast.provider.keys, cast.approve("clip", terms.agreement_hash)));
    for (keys, call) in calls {
        ledger.submit_signed(keys, call.target(), call.payload())?;
    }

    let mut clock = 0;
    while ledger.pending() > 0 {
        clock += ledger.config().block_interval_ms;
        if let Some(block) = ledger.seal_tick(clock) {
            let reverted = block.outcomes.iter().filter(|o| o.reason.is_some()).count();
            println!(
                "block {} at t={} ms: {} txs ({} reverted), root {}",
                block.height,
                block.timestamp,
                block.transactions.len(),
                reverted,
                block.state_root
            );
        }
    }

    let log = ledger.export_log();
    let mut ndjson = Vec::new();
    write_log(&mut ndjson, &log)?;
    let parsed = read_log(ndjson.as_slice())?;
    let replayed = replay::<ChainState>(&parsed)?;
    let tip = ledger.snapshot().state_root;
    println!("\n{} transactions, {} bytes of NDJSON", parsed.len(), ndjson.len());
    println!("tip root      {tip}");
    println!("replayed root {replayed}");
    assert_eq!(tip, replayed);
    Ok(())
}
