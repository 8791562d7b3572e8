//! DID registry on a bare `ChainState`: register, resolve, update and revoke,
//! plus the reverts an unrelated account runs into.
//!
//! Run with `cargo run --example did_registry`.

use mdm_core::crypto::Keypair;
use mdm_core::registry::{platform_did, Call, ChainState, DidDocument, DidRegisterArgs, DidRevokeArgs, DidUpdateArgs};

fn main() {
    let mut state = ChainState::default();
    let alice = Keypair::from_seed("example/alice");
    let mallory = Keypair::from_seed("example/mallory");
    let did = platform_did(&alice.address());

    let ddo = DidDocument::for_key(&did, &alice.public_key(), Some("https://alice.example/inbox")).to_canonical();
    state
        .execute(
            alice.address(),
            Call::DidRegister(DidRegisterArgs {
                bound_account: alice.address(),
                did: did.clone(),
                ddo: ddo.clone(),
            }),
        )
        .expect("first registration succeeds");
    println!("registered {did}");
    assert_eq!(state.dids.resolve(&did).unwrap(), ddo);
    println!("resolves to:\n{}", state.dids.resolve(&did).unwrap());

    let moved = DidDocument::for_key(&did, &alice.public_key(), Some("https://alice.example/v2")).to_canonical();
    let update = Call::DidUpdate(DidUpdateArgs {
        did: did.clone(),
        ddo: moved.clone(),
    });
    let err = state.execute(mallory.address(), update.clone()).unwrap_err();
    println!("update by another account: {}", err.code());
    state.execute(alice.address(), update).unwrap();
    let endpoint = state.dids.resolve_document(&did).unwrap();
    println!("after update, endpoint = {}", endpoint.service_endpoint().unwrap_or("-"));

    state
        .execute(alice.address(), Call::DidRevoke(DidRevokeArgs { did: did.clone() }))
        .unwrap();
    println!("after revoke, resolve -> {}", state.dids.resolve(&did).unwrap_err().code());
    let again = Call::DidRegister(DidRegisterArgs {
        bound_account: alice.address(),
        did: did.clone(),
        ddo: moved,
    });
    println!("re-registering a revoked DID -> {}", state.execute(alice.address(), again).unwrap_err().code());
}
