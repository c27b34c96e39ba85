//! Shared inputs for the criterion benches.

use ocsc_core::codec::{build_keepalive, build_progress_status, reference, serialize, Profile};

/// Named frames of the three sizes the fuzzer sees most: the captured
/// listing, a status update and an empty keepalive.
pub fn frames() -> Vec<(&'static str, Vec<u8>)> {
    let profile = Profile::default();
    let status = build_progress_status([0, 0, 0, 50], "Connecting to vpn.example.com", &profile)
        .and_then(|m| serialize(&m))
        .expect("status frame");
    let keepalive = serialize(&build_keepalive(&profile)).expect("keepalive frame");
    vec![
        ("listing", reference::script_deploy_frame()),
        ("status", status),
        ("keepalive", keepalive),
    ]
}
