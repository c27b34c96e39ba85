use std::collections::BTreeMap;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::installer::{check_installer, InstallerPackage, InstallerVerdict};
use super::policy::element_text;
use super::{AgentPolicy, BugId, Event, EventKind, EventLog, Sandbox, SeededBugs};
use crate::codec::{
    parse_frame_with, serialize_with, DeployCommand, DigestAlgo, IpcHeader, IpcMessage, TlvField,
};

/// Declared body length that, with more bytes following, corrupts the heap.
const CORRUPTING_BODY_LEN: u16 = 0x0006;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployedFile {
    pub path: PathBuf,
    pub mode: u32,
    pub digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadDigest,
    SrcOutsideTemp,
    DstOutsideSandbox,
    Policy,
    SrcMissing,
    UnsupportedAlgo,
    Io,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::BadDigest => "bad_digest",
            RejectReason::SrcOutsideTemp => "src_outside_temp",
            RejectReason::DstOutsideSandbox => "dst_outside_sandbox",
            RejectReason::Policy => "policy",
            RejectReason::SrcMissing => "src_missing",
            RejectReason::UnsupportedAlgo => "unsupported_algo",
            RejectReason::Io => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MoveOutcome {
    Moved { dst: PathBuf, mode: u32 },
    Rejected(RejectReason),
}

#[derive(Debug, Default)]
pub struct AgentState {
    pub corrupt_heap: Option<Instant>,
    pub deployed: Vec<DeployedFile>,
    /// Open connections and when each last had a frame dispatched.
    pub open_conns: BTreeMap<u64, Option<Instant>>,
    pub scripting_enabled: bool,
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct FrameResponse {
    pub replies: Vec<Vec<u8>>,
    pub crash: Option<BugId>,
    pub death_at: Option<Instant>,
}

impl FrameResponse {
    fn crash(bug: BugId) -> Self {
        FrameResponse {
            crash: Some(bug),
            ..Default::default()
        }
    }
}

/// The agent's frame handling and deployment logic, free of any networking.
pub struct AgentCore {
    policy: AgentPolicy,
    bugs: SeededBugs,
    sandbox: Sandbox,
    state: AgentState,
    log: Arc<EventLog>,
}

impl AgentCore {
    pub fn new(policy: AgentPolicy, bugs: SeededBugs, log: Arc<EventLog>) -> Self {
        let sandbox = Sandbox::new(&policy);
        let mut core = AgentCore {
            policy,
            bugs,
            sandbox,
            state: AgentState::default(),
            log,
        };
        core.state.scripting_enabled = core.read_profile().1;
        core
    }

    pub fn policy(&self) -> &AgentPolicy {
        &self.policy
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    pub fn open_connection(&mut self, conn: u64) {
        self.state.open_conns.insert(conn, None);
    }

    pub fn close_connection(&mut self, conn: u64) {
        self.state.open_conns.remove(&conn);
    }

    fn crash(&mut self, bug: BugId) -> FrameResponse {
        self.log.append(EventKind::Crash { bug });
        FrameResponse::crash(bug)
    }

    /// Handles one frame: `frame` is the header plus declared body, `excess`
    /// the bytes that followed it on the stream before the next magic.
    pub fn handle_frame(
        &mut self,
        frame: &[u8],
        excess: &[u8],
        conn: u64,
        now: Instant,
    ) -> FrameResponse {
        let Ok(header) = IpcHeader::decode(frame) else {
            return FrameResponse::default();
        };
        if !header.has_valid_prefix() {
            return FrameResponse::default();
        }
        let kind = header.kind();
        let corrupt_before = self.state.corrupt_heap.is_some();
        let mut response = FrameResponse::default();

        // Rejected message is zeroed and then deleted a second time.
        if self.bugs.b2_double_free && header.body_len == 0 && !excess.is_empty() {
            return self.crash(BugId::B2);
        }

        if header.body_len == CORRUPTING_BODY_LEN
            && !excess.is_empty()
            && self.bugs.tracks_heap_corruption()
        {
            self.state.corrupt_heap.get_or_insert(now);
            let timer = self.bugs.b3_timed_heap.then_some(self.bugs.b3_timer);
            response.death_at = timer.map(|t| now + t);
            self.log.append(EventKind::HeapCorrupted {
                death_in_ms: timer.map(|t| t.as_millis() as u64),
            });
        }

        // Basic validation allocates a response stub on the corrupted heap.
        if self.bugs.b4_alloc_after_corrupt && corrupt_before {
            return self.crash(BugId::B4);
        }

        if kind.is_dispatchable() {
            let window = self.policy.race_window;
            let racing = self.state.open_conns.iter().any(|(&id, last)| {
                id != conn && last.is_some_and(|t| now.saturating_duration_since(t) <= window)
            });
            if self.bugs.b1_race && racing {
                return self.crash(BugId::B1);
            }
            self.state.open_conns.insert(conn, Some(now));
        }

        let profile = self.policy.profile.clone();
        let Ok(msg) = parse_frame_with(frame, &profile) else {
            return response;
        };
        if kind == profile.script_move {
            let text = match DeployCommand::from_message(&msg) {
                Ok(cmd) => match self.apply_cac_move(&cmd) {
                    MoveOutcome::Moved { mode, .. } => format!("OK {mode:o}"),
                    MoveOutcome::Rejected(reason) => format!("REJECTED {}", reason.as_str()),
                },
                Err(_) => "REJECTED malformed".to_string(),
            };
            let ack = IpcMessage::new(profile.ack, vec![TlvField::string(1, &text)]);
            if let Ok(bytes) = serialize_with(&ack, &profile) {
                response.replies.push(bytes);
            }
        } else if kind == profile.disconnect {
            self.trigger_disconnect();
        } else if kind == profile.reconnect {
            self.reload_profile_on_reconnect();
        }
        response
    }

    /// Fires a scheduled B3 death if the heap is still marked corrupt.
    pub fn fire_timer(&mut self) -> Option<BugId> {
        if self.bugs.b3_timed_heap && self.state.corrupt_heap.is_some() {
            Some(self.crash(BugId::B3).crash.unwrap())
        } else {
            None
        }
    }

    /// Moves a staged file after the source-location and digest checks. Sender
    /// authentication and overwrite protection are deliberately absent.
    pub fn apply_cac_move(&mut self, cmd: &DeployCommand) -> MoveOutcome {
        let outcome = self.try_move(cmd);
        match &outcome {
            Ok((file, src)) => {
                self.log.append(EventKind::Moved {
                    src: src.clone(),
                    dst: file.path.clone(),
                    mode: file.mode,
                    digest: file.digest.clone(),
                });
                let moved = MoveOutcome::Moved {
                    dst: file.path.clone(),
                    mode: file.mode,
                };
                self.state.deployed.push(file.clone());
                moved
            }
            Err(reason) => {
                self.log.append(EventKind::Rejected {
                    reason: reason.as_str().into(),
                    src: cmd.src_path.clone(),
                    dst: cmd.dst_path.clone(),
                });
                MoveOutcome::Rejected(*reason)
            }
        }
    }

    fn try_move(&self, cmd: &DeployCommand) -> Result<(DeployedFile, PathBuf), RejectReason> {
        let src = self
            .sandbox
            .resolve(&cmd.src_path)
            .filter(|p| p.starts_with(self.sandbox.temp_dir()))
            .ok_or(RejectReason::SrcOutsideTemp)?;
        let dst = self
            .sandbox
            .resolve(&cmd.dst_path)
            .ok_or(RejectReason::DstOutsideSandbox)?;
        let algo: DigestAlgo = cmd
            .digest_algo
            .parse()
            .map_err(|_| RejectReason::UnsupportedAlgo)?;
        let data = fs::read(&src).map_err(|_| RejectReason::SrcMissing)?;
        let digest = algo.digest_upper_hex(&data);
        if !digest.eq_ignore_ascii_case(&cmd.digest_hex) {
            return Err(RejectReason::BadDigest);
        }
        if self.policy.restrict_script_web_deploy && dst.starts_with(self.sandbox.script_dir()) {
            return Err(RejectReason::Policy);
        }

        let mode = if cmd.mode_flag == '1' { 0o755 } else { 0o644 };
        let parent = dst.parent().ok_or(RejectReason::DstOutsideSandbox)?;
        fs::create_dir_all(parent).map_err(|_| RejectReason::Io)?;
        // Re-check after creating directories: a symlink may have appeared.
        if !self.sandbox.contains(&dst) || !self.sandbox.contains(&src) {
            return Err(RejectReason::DstOutsideSandbox);
        }
        if fs::rename(&src, &dst).is_err() {
            fs::write(&dst, &data).map_err(|_| RejectReason::Io)?;
            let _ = fs::remove_file(&src);
        }
        fs::set_permissions(&dst, fs::Permissions::from_mode(mode))
            .map_err(|_| RejectReason::Io)?;
        Ok((
            DeployedFile {
                path: dst,
                mode,
                digest,
            },
            src,
        ))
    }

    /// Logs a would-execute event for every executable OnDisconnect script
    /// when scripting is active. Nothing is ever run.
    pub fn trigger_disconnect(&mut self) -> Vec<Event> {
        self.log.append(EventKind::Disconnect);
        if !self.state.scripting_enabled {
            return Vec::new();
        }
        let mut scripts: Vec<(PathBuf, u32)> = fs::read_dir(self.sandbox.script_dir())
            .into_iter()
            .flatten()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("OnDisconnect"))
            .filter_map(|e| {
                let meta = e.metadata().ok()?;
                meta.is_file()
                    .then(|| (e.path(), meta.permissions().mode() & 0o777))
            })
            .collect();
        scripts.sort();
        scripts
            .into_iter()
            .filter(|(_, mode)| mode & 0o111 != 0)
            .map(|(path, mode)| self.log.append(EventKind::WouldExecute { path, mode }))
            .collect()
    }

    /// Re-reads the client profile, as happens on every reconnect.
    pub fn reload_profile_on_reconnect(&mut self) -> bool {
        let (path, enabled) = self.read_profile();
        self.state.scripting_enabled = enabled;
        self.log.append(EventKind::ProfileReloaded {
            path,
            enable_scripting: enabled,
        });
        enabled
    }

    fn read_profile(&self) -> (Option<PathBuf>, bool) {
        let Some(path) = first_profile(self.sandbox.profile_dir()) else {
            return (None, false);
        };
        let enabled = fs::read_to_string(&path)
            .map(|xml| parse_enable_scripting(&xml))
            .unwrap_or(false);
        (Some(path), enabled)
    }

    pub fn check_installer(&mut self, pkg: &InstallerPackage) -> InstallerVerdict {
        let verdict = check_installer(
            pkg,
            &self.policy.installed_version,
            self.policy.enforce_version_order,
        );
        self.log.append(EventKind::Installer {
            version: pkg.version.clone(),
            verdict: verdict.to_string(),
        });
        verdict
    }

    pub fn race_window(&self) -> Duration {
        self.policy.race_window
    }
}

fn first_profile(dir: &Path) -> Option<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "xml") && p.is_file())
        .collect();
    files.sort();
    files.into_iter().next()
}

/// `EnableScripting` from a client profile; absent or unparsable means off.
pub fn parse_enable_scripting(xml: &str) -> bool {
    element_text(xml, "EnableScripting").is_some_and(|v| v.eq_ignore_ascii_case("true"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{
        build_disconnect, build_keepalive, build_progress_status, build_script_move, reference,
        serialize, Profile,
    };

    struct Fixture {
        _dir: tempfile::TempDir,
        core: AgentCore,
    }

    fn fixture(bugs: SeededBugs, tweak: impl FnOnce(&mut AgentPolicy)) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let mut policy = AgentPolicy::new(dir.path());
        policy.event_log = None;
        tweak(&mut policy);
        for d in [
            &policy.script_dir,
            &policy.profile_dir,
            &policy.allowed_temp_prefix,
        ] {
            fs::create_dir_all(d).unwrap();
        }
        let log = Arc::new(EventLog::new(None).unwrap());
        Fixture {
            core: AgentCore::new(policy, bugs, log),
            _dir: dir,
        }
    }

    fn stage(core: &AgentCore, rel: &str, content: &[u8]) -> String {
        let path = core.sandbox().temp_dir().join(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, content).unwrap();
        DigestAlgo::Sha1.digest_upper_hex(content)
    }

    fn listing_cmd(digest: String, flag: char, dst: &str) -> DeployCommand {
        DeployCommand {
            digest_hex: digest,
            mode_flag: flag,
            dst_path: dst.into(),
            ..reference::script_deploy_command()
        }
    }

    fn status_trigger() -> Vec<u8> {
        let mut bytes =
            serialize(&build_progress_status([0, 0, 0, 0x32], "50%", &Profile::default()).unwrap())
                .unwrap();
        bytes[6..8].copy_from_slice(&[6, 0]);
        bytes
    }

    fn deliver(core: &mut AgentCore, raw: &[u8], conn: u64, now: Instant) -> FrameResponse {
        let split = crate::codec::split_frame(raw).unwrap();
        let end = raw.len() - split.excess.len();
        core.handle_frame(&raw[..end], split.excess, conn, now)
    }

    #[test]
    fn listing_move_is_accepted_executable() {
        let mut f = fixture(SeededBugs::none(), |_| {});
        let digest = stage(
            &f.core,
            ".acH1J33B/OnConnect_little",
            b"#!/bin/sh\necho hi\n",
        );
        let cmd = listing_cmd(digest, '1', "/opt/cisco/anyconnect/script/OnConnect_little");
        let out = f.core.apply_cac_move(&cmd);
        let dst = f.core.sandbox().script_dir().join("OnConnect_little");
        assert_eq!(
            out,
            MoveOutcome::Moved {
                dst: dst.clone(),
                mode: 0o755
            }
        );
        assert_eq!(
            fs::metadata(&dst).unwrap().permissions().mode() & 0o777,
            0o755
        );
        assert_eq!(f.core.state().deployed[0].mode, 0o755);
    }

    #[test]
    fn profile_overwrite_is_permitted_read_only() {
        let mut f = fixture(SeededBugs::none(), |_| {});
        let existing = f.core.sandbox().profile_dir().join("corp.xml");
        fs::write(&existing, "<EnableScripting>false</EnableScripting>").unwrap();
        let digest = stage(
            &f.core,
            "p/corp.xml",
            b"<EnableScripting>true</EnableScripting>",
        );
        let mut cmd = listing_cmd(digest, '0', "/opt/cisco/anyconnect/profile/corp.xml");
        cmd.src_path = "/tmp/p/corp.xml".into();
        assert_eq!(
            f.core.apply_cac_move(&cmd),
            MoveOutcome::Moved {
                dst: existing.clone(),
                mode: 0o644
            }
        );
        assert!(fs::read_to_string(existing).unwrap().contains("true"));
    }

    #[test]
    fn restrict_policy_blocks_script_dir_only() {
        let mut f = fixture(SeededBugs::none(), |p| p.restrict_script_web_deploy = true);
        let digest = stage(&f.core, ".acH1J33B/OnConnect_little", b"x");
        let cmd = listing_cmd(
            digest.clone(),
            '1',
            "/opt/cisco/anyconnect/script/OnConnect_little",
        );
        assert_eq!(
            f.core.apply_cac_move(&cmd),
            MoveOutcome::Rejected(RejectReason::Policy)
        );
        assert!(f.core.state().deployed.is_empty());
        let cmd = listing_cmd(digest, '0', "/opt/cisco/anyconnect/profile/x.xml");
        assert!(matches!(
            f.core.apply_cac_move(&cmd),
            MoveOutcome::Moved { .. }
        ));
    }

    #[test]
    fn digest_and_location_gates() {
        let mut f = fixture(SeededBugs::none(), |_| {});
        stage(&f.core, ".acH1J33B/OnConnect_little", b"payload");
        let cmd = listing_cmd("0".repeat(40), '1', "/opt/cisco/anyconnect/script/x");
        assert_eq!(
            f.core.apply_cac_move(&cmd),
            MoveOutcome::Rejected(RejectReason::BadDigest)
        );
        assert!(f
            .core
            .sandbox()
            .temp_dir()
            .join(".acH1J33B/OnConnect_little")
            .exists());

        let mut cmd = listing_cmd("0".repeat(40), '1', "/opt/cisco/anyconnect/script/x");
        cmd.src_path = "/etc/passwd".into();
        assert_eq!(
            f.core.apply_cac_move(&cmd),
            MoveOutcome::Rejected(RejectReason::SrcOutsideTemp)
        );
        let digest = DigestAlgo::Sha1.digest_upper_hex(b"payload");
        let cmd = listing_cmd(digest, '1', "/tmp/../../../../etc/cron.d/x");
        assert_eq!(
            f.core.apply_cac_move(&cmd),
            MoveOutcome::Rejected(RejectReason::DstOutsideSandbox)
        );
    }

    #[test]
    fn disconnect_needs_scripting_and_exec_bit() {
        let mut f = fixture(SeededBugs::none(), |_| {});
        assert!(f.core.trigger_disconnect().is_empty());

        let script = f.core.sandbox().script_dir().join("OnDisconnect");
        fs::write(&script, "#!/bin/sh").unwrap();
        fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
        // scripting disabled: no event
        assert!(f.core.trigger_disconnect().is_empty());

        fs::write(
            f.core.sandbox().profile_dir().join("p.xml"),
            "<EnableScripting>true</EnableScripting>",
        )
        .unwrap();
        assert!(f.core.reload_profile_on_reconnect());
        let events = f.core.trigger_disconnect();
        assert_eq!(events.len(), 1);
        assert_eq!(
            events[0].kind,
            EventKind::WouldExecute {
                path: script.clone(),
                mode: 0o755
            }
        );

        fs::set_permissions(&script, fs::Permissions::from_mode(0o644)).unwrap();
        assert!(f.core.trigger_disconnect().is_empty());
    }

    #[test]
    fn profile_reload_semantics() {
        let mut f = fixture(SeededBugs::none(), |_| {});
        assert!(!f.core.reload_profile_on_reconnect());
        let path = f.core.sandbox().profile_dir().join("p.xml");
        fs::write(&path, "<EnableScripting>false</EnableScripting>").unwrap();
        assert!(!f.core.reload_profile_on_reconnect());
        fs::write(&path, "<EnableScripting>true</EnableScripting>").unwrap();
        // overwritten on disk, not yet active until reconnect
        assert!(!f.core.state().scripting_enabled);
        assert!(f.core.reload_profile_on_reconnect());
        assert!(f.core.reload_profile_on_reconnect());
    }

    #[test]
    fn b2_fires_on_zero_body_len_with_payload() {
        let mut f = fixture(SeededBugs::only(BugId::B2), |_| {});
        let mut raw = reference::script_deploy_frame();
        raw[6..8].copy_from_slice(&[0, 0]);
        assert_eq!(
            deliver(&mut f.core, &raw, 1, Instant::now()).crash,
            Some(BugId::B2)
        );
        let last = f.core.log().snapshot().pop().unwrap();
        assert_eq!(last.kind, EventKind::Crash { bug: BugId::B2 });

        // header-only frame with body_len 0 carries nothing: harmless
        let keepalive = serialize(&build_keepalive(&Profile::default())).unwrap();
        let mut g = fixture(SeededBugs::only(BugId::B2), |_| {});
        assert_eq!(
            deliver(&mut g.core, &keepalive, 1, Instant::now()).crash,
            None
        );
    }

    #[test]
    fn b3_schedules_death_without_crashing() {
        let mut f = fixture(SeededBugs::only(BugId::B3), |_| {});
        let now = Instant::now();
        let resp = deliver(&mut f.core, &status_trigger(), 1, now);
        assert_eq!(resp.crash, None);
        assert_eq!(resp.death_at, Some(now + Duration::from_millis(2000)));
        assert!(f.core.state().corrupt_heap.is_some());
        // without b4, later frames are processed normally
        let keepalive = serialize(&build_keepalive(&Profile::default())).unwrap();
        assert_eq!(deliver(&mut f.core, &keepalive, 2, now).crash, None);
        assert_eq!(f.core.fire_timer(), Some(BugId::B3));
    }

    #[test]
    fn b4_needs_corruption_then_another_frame() {
        let mut f = fixture(SeededBugs::only(BugId::B4), |_| {});
        let now = Instant::now();
        let resp = deliver(&mut f.core, &status_trigger(), 1, now);
        assert_eq!(resp, FrameResponse::default());
        assert_eq!(f.core.fire_timer(), None);
        let keepalive = serialize(&build_keepalive(&Profile::default())).unwrap();
        assert_eq!(
            deliver(&mut f.core, &keepalive, 2, now).crash,
            Some(BugId::B4)
        );
    }

    #[test]
    fn b1_requires_two_open_connections() {
        let mut f = fixture(SeededBugs::only(BugId::B1), |_| {});
        let golden = reference::script_deploy_frame();
        let now = Instant::now();
        f.core.open_connection(1);
        assert_eq!(deliver(&mut f.core, &golden, 1, now).crash, None);
        // same connection again: no race
        assert_eq!(deliver(&mut f.core, &golden, 1, now).crash, None);
        f.core.close_connection(1);
        f.core.open_connection(2);
        assert_eq!(deliver(&mut f.core, &golden, 2, now).crash, None);
        f.core.open_connection(3);
        let late = now + Duration::from_millis(51);
        assert_eq!(deliver(&mut f.core, &golden, 3, late).crash, None);
        f.core.open_connection(4);
        assert_eq!(
            deliver(&mut f.core, &golden, 4, late + Duration::from_millis(10)).crash,
            Some(BugId::B1)
        );
    }

    #[test]
    fn unknown_and_malformed_frames_are_ignored() {
        let mut f = fixture(SeededBugs::none(), |_| {});
        let mut unknown = serialize(&build_keepalive(&Profile::default())).unwrap();
        unknown[0x24] = 0x42;
        assert_eq!(
            deliver(&mut f.core, &unknown, 1, Instant::now()),
            FrameResponse::default()
        );
        assert_eq!(
            f.core.handle_frame(b"garbage", b"", 1, Instant::now()),
            FrameResponse::default()
        );
    }

    #[test]
    fn script_move_frame_gets_ack_and_disconnect_routes() {
        let mut f = fixture(SeededBugs::none(), |_| {});
        let digest = stage(&f.core, "x/OnDisconnect", b"#!/bin/sh");
        let cmd = DeployCommand {
            src_path: "/tmp/x/OnDisconnect".into(),
            ..listing_cmd(digest, '1', "/opt/cisco/anyconnect/script/OnDisconnect")
        };
        let profile = Profile::default();
        let frame =
            serialize(&build_script_move(&cmd, reference::VPNDOWNLOADER_PATH, &profile).unwrap())
                .unwrap();
        let resp = deliver(&mut f.core, &frame, 1, Instant::now());
        assert_eq!(resp.replies.len(), 1);
        let ack = crate::codec::parse_frame(&resp.replies[0]).unwrap();
        assert_eq!(ack.tlvs[0].value_str(), Some("OK 755"));
        let disc = serialize(&build_disconnect(1, &profile).unwrap()).unwrap();
        deliver(&mut f.core, &disc, 1, Instant::now());
        assert!(f
            .core
            .log()
            .snapshot()
            .iter()
            .any(|e| e.kind == EventKind::Disconnect));
    }
}
