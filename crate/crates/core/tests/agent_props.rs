use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ocsc_core::agent::{
    AgentCore, AgentPolicy, AgentTarget, BugId, EventLog, MoveOutcome, RejectReason, SeededBugs,
};
use ocsc_core::codec::{
    build_keepalive, build_progress_status, reference, serialize, DeployCommand, DigestAlgo,
    Profile, BODY_LEN_OFFSET,
};
use ocsc_core::mutate::havoc;
use ocsc_core::orchestrator::{
    execute_sequence, probe_liveness, FuzzSequence, Liveness, Observation, Target,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Lab {
    dir: tempfile::TempDir,
    core: AgentCore,
}

fn lab(bugs: SeededBugs, restrict: bool) -> Lab {
    let dir = tempfile::tempdir().unwrap();
    let mut policy = AgentPolicy::new(dir.path());
    policy.event_log = None;
    policy.restrict_script_web_deploy = restrict;
    for d in [
        &policy.script_dir,
        &policy.profile_dir,
        &policy.allowed_temp_prefix,
    ] {
        fs::create_dir_all(d).unwrap();
    }
    let core = AgentCore::new(policy, bugs, Arc::new(EventLog::new(None).unwrap()));
    Lab { dir, core }
}

/// Stages `content` under the sandbox tmp dir and returns a command moving it.
fn staged(lab: &Lab, content: &[u8], dst: &str, flag: char) -> DeployCommand {
    let src = lab.core.sandbox().temp_dir().join(".acSTAGE/payload");
    fs::create_dir_all(src.parent().unwrap()).unwrap();
    fs::write(&src, content).unwrap();
    DeployCommand {
        src_path: "/tmp/.acSTAGE/payload".into(),
        dst_path: dst.into(),
        digest_hex: DigestAlgo::Sha1.digest_upper_hex(content),
        mode_flag: flag,
        ..reference::script_deploy_command()
    }
}

fn canonical_root(lab: &Lab) -> std::path::PathBuf {
    lab.dir.path().canonicalize().unwrap()
}

fn dst_path() -> impl Strategy<Value = String> {
    let segment = prop::sample::select(vec![
        "..",
        ".",
        "script",
        "profile",
        "tmp",
        "x",
        "OnDisconnect",
        "etc",
        "",
    ]);
    let prefix = prop::sample::select(vec![
        "/opt/cisco/anyconnect/script/",
        "/opt/cisco/anyconnect/profile/",
        "/tmp/",
        "/etc/",
        "",
        "/",
    ]);
    (prefix, prop::collection::vec(segment, 1..5))
        .prop_map(|(p, segs)| format!("{p}{}", segs.join("/")))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn moves_stay_inside_the_sandbox(dst in dst_path(), flag in prop::sample::select(vec!['0', '1'])) {
        let mut lab = lab(SeededBugs::none(), false);
        let cmd = staged(&lab, b"payload", &dst, flag);
        let root = canonical_root(&lab);
        if let MoveOutcome::Moved { dst, .. } = lab.core.apply_cac_move(&cmd) {
            prop_assert!(dst.starts_with(&root), "{dst:?} escaped {root:?}");
        }
        for f in &lab.core.state().deployed {
            prop_assert!(f.path.starts_with(&root));
        }
    }

    #[test]
    fn restrict_keeps_scripts_out_of_the_ledger(dst in dst_path()) {
        let mut lab = lab(SeededBugs::none(), true);
        let cmd = staged(&lab, b"#!/bin/sh\n", &dst, '1');
        lab.core.apply_cac_move(&cmd);
        let script_dir = lab.core.sandbox().script_dir().to_path_buf();
        for f in &lab.core.state().deployed {
            prop_assert!(!f.path.starts_with(&script_dir), "{:?}", f.path);
        }
    }

    #[test]
    fn wrong_digest_never_moves(content in prop::collection::vec(any::<u8>(), 1..64), fake in "[0-9A-F]{40}") {
        let mut lab = lab(SeededBugs::none(), false);
        let mut cmd = staged(&lab, &content, "/opt/cisco/anyconnect/script/OnDisconnect", '1');
        prop_assume!(fake != cmd.digest_hex);
        cmd.digest_hex = fake;
        prop_assert_eq!(
            lab.core.apply_cac_move(&cmd),
            MoveOutcome::Rejected(RejectReason::BadDigest)
        );
        prop_assert!(lab.core.state().deployed.is_empty());
        prop_assert!(!lab.core.sandbox().script_dir().join("OnDisconnect").exists());
    }
}

#[test]
fn mode_follows_the_flag_everywhere() {
    for dst in [
        "/opt/cisco/anyconnect/script/OnConnect_little",
        "/opt/cisco/anyconnect/profile/AnyConnectProfile.xml",
    ] {
        for (flag, want) in [('1', 0o755), ('0', 0o644)] {
            let mut lab = lab(SeededBugs::none(), false);
            let cmd = staged(&lab, b"data", dst, flag);
            let MoveOutcome::Moved { dst: path, mode } = lab.core.apply_cac_move(&cmd) else {
                panic!("{dst} with flag {flag} was rejected");
            };
            assert_eq!(mode, want);
            assert_eq!(lab.core.state().deployed[0].mode, want);
            assert_eq!(
                fs::metadata(&path).unwrap().permissions().mode() & 0o777,
                want
            );
        }
    }
}

#[test]
fn bug_free_agent_survives_ten_thousand_fuzzed_frames() {
    let mut lab = lab(SeededBugs::none(), false);
    let profile = Profile::default();
    let seeds = [
        reference::script_deploy_frame(),
        serialize(&build_keepalive(&profile)).unwrap(),
        serialize(&build_progress_status([0, 0, 0, 50], "Connected", &profile).unwrap()).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    lab.core.open_connection(1);
    lab.core.open_connection(2);
    for i in 0..10_000u64 {
        let seed = &seeds[i as usize % seeds.len()];
        let frame = havoc(seed, rng.gen(), rng.gen_range(1..=4));
        let cut = rng.gen_range(0..=frame.len());
        let conn = 1 + (i % 2);
        let r = lab
            .core
            .handle_frame(&frame[..cut], &frame[cut..], conn, Instant::now());
        assert_eq!(r.crash, None, "frame {i}: {}", hex::encode(&frame));
        assert_eq!(r.death_at, None);
    }
    assert!(lab.core.fire_timer().is_none());
}

fn tampered(body_len: u16) -> Vec<u8> {
    let mut f = reference::script_deploy_frame();
    f[BODY_LEN_OFFSET..BODY_LEN_OFFSET + 2].copy_from_slice(&body_len.to_le_bytes());
    f
}

fn start(bugs: SeededBugs) -> (tempfile::TempDir, AgentTarget) {
    let dir = tempfile::tempdir().unwrap();
    let target = AgentTarget::start(AgentPolicy::new(dir.path()), bugs).unwrap();
    (dir, target)
}

#[test]
fn b2_and_b4_crash_on_the_triggering_frame_every_time() {
    let keepalive = serialize(&build_keepalive(&Profile::default())).unwrap();
    let quick = Observation::default().quick();
    let cases = [
        (BugId::B2, vec![keepalive.clone(), tampered(0)], 1),
        (
            BugId::B4,
            vec![keepalive.clone(), tampered(6), keepalive.clone()],
            2,
        ),
    ];
    for (bug, frames, at) in cases {
        let (_dir, mut target) = start(SeededBugs::only(bug));
        for round in 0..5 {
            target.reset().unwrap();
            let r = execute_sequence(&FuzzSequence::serial(frames.clone()), target.addr(), &quick);
            assert_eq!(r.failed_step, Some(at), "{bug} round {round}: {r:?}");
            assert_eq!(
                target.reported_bug().as_deref(),
                Some(bug.to_string().as_str())
            );
        }
    }
}

#[test]
fn b3_death_lands_within_one_probe_interval_of_the_timer() {
    let timer = Duration::from_millis(300);
    let probe_interval = Duration::from_millis(100);
    let (_dir, target) = start(SeededBugs::only(BugId::B3).with_timer(timer));
    let obs = Observation::default().quick();
    let sent = Instant::now();
    let r = execute_sequence(&FuzzSequence::single(tampered(6)), target.addr(), &obs);
    assert!(
        r.outcome.is_ok(),
        "B3 must not crash while handling the frame"
    );
    let died = loop {
        if probe_liveness(target.addr(), &obs) == Liveness::Dead {
            break sent.elapsed();
        }
        assert!(sent.elapsed() < timer * 5, "agent never died");
        std::thread::sleep(Duration::from_millis(5));
    };
    assert!(died >= timer, "died after {died:?}");
    assert!(died <= timer + probe_interval, "died after {died:?}");
}

#[test]
fn b1_never_fires_from_a_single_lane() {
    let (_dir, target) = start(SeededBugs::only(BugId::B1));
    let frame = reference::script_deploy_frame();
    let seq = FuzzSequence::serial(vec![frame; 50]);
    let quick = Observation::default().quick();
    for _ in 0..4 {
        let r = execute_sequence(&seq, target.addr(), &quick);
        assert!(r.outcome.is_ok(), "{r:?}");
    }
    assert_eq!(probe_liveness(target.addr(), &quick), Liveness::Alive);
}

#[test]
fn sandbox_layout_is_created_by_the_server() {
    let (dir, _target) = start(SeededBugs::none());
    for sub in ["tmp", "script", "profile"] {
        assert!(Path::new(dir.path()).join(sub).is_dir(), "{sub}");
    }
}
