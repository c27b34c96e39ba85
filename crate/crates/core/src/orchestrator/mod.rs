//! Campaign runner for the OCSC agent: sends frame sequences over TCP, watches
//! for immediate and delayed death, and turns detections into minimized,
//! replayable crash reports.
//!
//! Every step of a sequence uses its own connection. A healthy agent answers a
//! client half-close with a session-close frame; a connection that ends
//! without one means the agent went down while handling the step.

mod bucket;
mod campaign;
mod config;
pub mod ddmin;
mod exec;
mod minimize;
mod report;
mod sequence;
mod target;

pub use bucket::{bucket, frame_fingerprint};
pub use campaign::{run_campaign, CampaignReport};
pub use config::CampaignConfig;
pub use exec::{execute_sequence, probe_liveness, ExecResult, Liveness, Observation, Outcome};
pub use minimize::{minimize, replay, MinimizeOptions, ReplayResult};
pub use report::{CrashReport, Detection};
pub use sequence::{FuzzSequence, Step};
pub use target::{RemoteTarget, Target};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("target {0} is unreachable")]
    TargetUnreachable(String),
    #[error("sequence does not crash the target")]
    NotCrashing,
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("config: {0}")]
    Config(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Corpus(#[from] crate::mutate::CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// splitmix64 finalizer, used to derive per-execution seeds.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
