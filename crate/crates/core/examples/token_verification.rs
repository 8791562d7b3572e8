//! Issues an access certificate on a bare `ChainState` and walks the
//! six-step verifier over the genuine token and several tampered ones.
//!
//! Run with `cargo run --example token_verification`.

use mdm_core::access::{prepare_certificate, verify_token, AccessToken, ValidTime, VerificationReport};
use mdm_core::crypto::Keypair;
use mdm_core::registry::{Call, ChainState, DidRevokeArgs};
use mdm_core::rights::{AccessRights, Right};
use mdm_core::scenario::Cast;

fn show(label: &str, report: &VerificationReport) {
    match report.failed_step {
        None => println!("{label:<28} accept"),
        Some(step) => {
            let detail = report.steps.last().and_then(|s| s.detail.as_deref()).unwrap_or("");
            println!("{label:<28} reject at step {} {step:?}: {detail}", step.number());
        }
    }
}

fn main() {
    let cast = Cast::from_seed("example");
    let mut state = ChainState::default();
    let run = |state: &mut ChainState, who: &Keypair, call: Call| {
        state.execute(who.address(), call).expect("setup call succeeds")
    };
    for who in cast.all() {
        run(&mut state, &who.keys, who.register_did());
    }
    let song = b"a recording";
    run(&mut state, &cast.owner.keys, cast.owner.register_media("song", song));
    let rights: AccessRights = [Right::Publication, Right::Exhibition].into_iter().collect();
    let terms = cast.terms("license", b"terms of use", rights);
    let (owner_sig, provider_sig) = (cast.owner.sign_terms(&terms), cast.provider.sign_terms(&terms));
    let hash = terms.agreement_hash;
    run(&mut state, &cast.provider.keys, Call::AgreementGenerate(terms));
    run(&mut state, &cast.owner.keys, Call::AgreementOwnerSign(owner_sig));
    run(&mut state, &cast.provider.keys, Call::AgreementProviderSign(provider_sig));
    run(&mut state, &cast.provider.keys, cast.approve("song", hash));

    let now = 1_700_000_000_000;
    let window = ValidTime::starting_at(now, 3_600_000);
    let request = cast.token_request("song", rights, window);
    let prepared = prepare_certificate(&state, &cast.provider.keys, &request, now).expect("grantable");
    run(&mut state, &cast.provider.keys, Call::IssueCert(prepared.issue.clone()));
    let token = prepared.token.encode();
    println!("cert_id {}", prepared.token.cert_id);
    println!("token   {token}\n");

    show("genuine", &verify_token(&state, &token, now + 1));
    show("at not_after", &verify_token(&state, &token, window.not_after));
    show("garbage", &verify_token(&state, "not.a.token", now));

    let stretched = AccessToken {
        valid_time: ValidTime::starting_at(now, 7_200_000),
        ..prepared.token.clone()
    };
    show("stretched window", &verify_token(&state, &stretched.encode(), now + 1));

    let mut forged = prepared.token.clone();
    forged.provider_sig.0[0] ^= 1;
    show("altered signature", &verify_token(&state, &forged.encode(), now + 1));

    let mut revoked = state.clone();
    let provider_did = cast.provider.did.clone();
    run(&mut revoked, &cast.provider.keys, Call::DidRevoke(DidRevokeArgs { did: provider_did }));
    show("provider DID revoked", &verify_token(&revoked, &token, now + 1));

    let mut revoked = state.clone();
    let owner_did = cast.owner.did.clone();
    run(&mut revoked, &cast.owner.keys, Call::DidRevoke(DidRevokeArgs { did: owner_did }));
    show("owner DID revoked", &verify_token(&revoked, &token, now + 1));
}
