//! Sandboxed, vulnerable-by-design stand-in for the privileged VPN agent.
//!
//! The agent speaks OCSC over loopback TCP without authenticating senders,
//! moves staged files inside a sandbox root on CAC-move requests and can be
//! told to "crash" through four seeded bug classes:
//!
//! | id | trigger |
//! |----|---------|
//! | B1 | dispatchable frames on two concurrently open connections within the race window |
//! | B2 | header body length 0 on a frame that carries body bytes |
//! | B3 | body length 6 on a frame that carries more: heap marked corrupt, death after a timer |
//! | B4 | any further frame while the heap is marked corrupt |
//!
//! A crash closes the listener and every connection without a session-close
//! frame, which is exactly what a fuzzer observes from the real daemon.

mod core;
mod events;
mod installer;
mod policy;
mod sandbox;
mod server;
mod stream;
mod target;

pub use self::core::{
    parse_enable_scripting, AgentCore, AgentState, DeployedFile, FrameResponse, MoveOutcome,
    RejectReason,
};
pub use events::{Event, EventKind, EventLog};
pub use installer::{check_installer, sign_payload_digest, InstallerPackage, InstallerVerdict};
pub use policy::{AgentPolicy, BugId, SeededBugs, DEFAULT_AGENT_PORT};
pub use sandbox::Sandbox;
pub use server::{serve, AgentHandle};
pub use stream::{next_frame, Extract};
pub use target::AgentTarget;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("bad sandbox: {0}")]
    BadSandbox(String),
    #[error("invalid bug list {0:?}")]
    BadBugList(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
