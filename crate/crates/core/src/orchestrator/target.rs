use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use super::{probe_liveness, Liveness, Observation, OrchestratorError};

/// Something the orchestrator can fuzz.
pub trait Target {
    fn addr(&self) -> SocketAddr;
    /// Brings the target to a fresh, live state.
    fn reset(&mut self) -> Result<(), OrchestratorError>;
    /// Bug id the target itself reported for its last crash, if it does that.
    fn reported_bug(&self) -> Option<String> {
        None
    }
}

/// An externally managed agent. Resetting only waits for it to come back,
/// which requires something like a restart supervisor on the other end.
#[derive(Debug, Clone)]
pub struct RemoteTarget {
    addr: SocketAddr,
    reset_timeout: Duration,
    obs: Observation,
}

impl RemoteTarget {
    pub fn new(addr: SocketAddr) -> Self {
        RemoteTarget {
            addr,
            reset_timeout: Duration::from_secs(5),
            obs: Observation::default(),
        }
    }

    pub fn with_reset_timeout(mut self, t: Duration) -> Self {
        self.reset_timeout = t;
        self
    }
}

impl Target for RemoteTarget {
    fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn reset(&mut self) -> Result<(), OrchestratorError> {
        let deadline = Instant::now() + self.reset_timeout;
        loop {
            if probe_liveness(self.addr, &self.obs) == Liveness::Alive {
                return Ok(());
            }
            if Instant::now() >= deadline {
                return Err(OrchestratorError::TargetUnreachable(self.addr.to_string()));
            }
            thread::sleep(Duration::from_millis(20));
        }
    }
}
