use std::net::SocketAddr;
use std::sync::Arc;

use super::server::serve_with_log;
use super::{AgentHandle, AgentPolicy, EventKind, EventLog, SeededBugs};
use crate::orchestrator::{OrchestratorError, Target};

/// In-process agent that the orchestrator can restart at will. Each reset
/// spawns a fresh instance on a new ephemeral port; the sandbox and the
/// event log carry over.
pub struct AgentTarget {
    policy: AgentPolicy,
    bugs: SeededBugs,
    log: Arc<EventLog>,
    handle: Option<AgentHandle>,
    /// Event log length at the last reset.
    mark: usize,
    report_bug_ids: bool,
}

impl AgentTarget {
    pub fn start(policy: AgentPolicy, bugs: SeededBugs) -> Result<Self, OrchestratorError> {
        let log = Arc::new(EventLog::new(policy.event_log.as_deref())?);
        let mut target = AgentTarget {
            policy: policy.with_port(0),
            bugs,
            log,
            handle: None,
            mark: 0,
            report_bug_ids: true,
        };
        target.reset()?;
        Ok(target)
    }

    /// Hides bug ids, leaving only what a black-box fuzzer could observe.
    pub fn without_bug_ids(mut self) -> Self {
        self.report_bug_ids = false;
        self
    }

    pub fn handle(&self) -> Option<&AgentHandle> {
        self.handle.as_ref()
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    pub fn bugs(&self) -> SeededBugs {
        self.bugs
    }
}

impl Target for AgentTarget {
    fn addr(&self) -> SocketAddr {
        self.handle
            .as_ref()
            .map(AgentHandle::addr)
            .expect("agent target is running")
    }

    fn reset(&mut self) -> Result<(), OrchestratorError> {
        if let Some(old) = self.handle.take() {
            old.stop();
        }
        let handle = serve_with_log(self.policy.clone(), self.bugs, self.log.clone())
            .map_err(|e| OrchestratorError::TargetUnreachable(e.to_string()))?;
        self.mark = self.log.len();
        self.handle = Some(handle);
        Ok(())
    }

    fn reported_bug(&self) -> Option<String> {
        if !self.report_bug_ids {
            return None;
        }
        self.log.snapshot()[self.mark..]
            .iter()
            .rev()
            .find_map(|e| match e.kind {
                EventKind::Crash { bug } => Some(bug.to_string()),
                _ => None,
            })
    }
}
