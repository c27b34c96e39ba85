use std::collections::HashMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::stream::next_frame;
use super::{AgentCore, AgentError, AgentPolicy, BugId, EventKind, EventLog, SeededBugs};
use crate::codec::{build_keepalive, serialize_with};

/// How long a connection may sit idle before buffered bytes are processed.
const IDLE_FLUSH: Duration = Duration::from_millis(5);
const MAX_BUFFERED: usize = 1 << 20;
const REBIND_ATTEMPTS: u32 = 200;

struct Instance {
    core: Mutex<AgentCore>,
    alive: AtomicBool,
    conns: Mutex<HashMap<u64, TcpStream>>,
    next_conn: AtomicU64,
    addr: SocketAddr,
    /// Written when a client half-closes and the agent is still up.
    close_marker: Vec<u8>,
}

impl Instance {
    fn new(policy: AgentPolicy, bugs: SeededBugs, log: Arc<EventLog>, addr: SocketAddr) -> Self {
        let close_marker =
            serialize_with(&build_keepalive(&policy.profile), &policy.profile).unwrap_or_default();
        Instance {
            core: Mutex::new(AgentCore::new(policy, bugs, log)),
            alive: AtomicBool::new(true),
            conns: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(0),
            addr,
            close_marker,
        }
    }

    fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    /// Tears the instance down: every socket is closed without the session-close
    /// frame and the accept loop is woken so the listener gets dropped.
    fn die(&self) {
        if !self.alive.swap(false, Ordering::SeqCst) {
            return;
        }
        for (_, conn) in self.conns.lock().unwrap().drain() {
            let _ = conn.shutdown(Shutdown::Both);
        }
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
    }
}

struct Shared {
    stopped: AtomicBool,
    current: Mutex<Arc<Instance>>,
    log: Arc<EventLog>,
}

/// A running agent. Dropping the handle stops it.
pub struct AgentHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    supervisor: Option<JoinHandle<()>>,
}

/// Binds the listener and starts serving in background threads.
pub fn serve(policy: AgentPolicy, bugs: SeededBugs) -> Result<AgentHandle, AgentError> {
    let log = EventLog::new(policy.event_log.as_deref())?;
    serve_with_log(policy, bugs, Arc::new(log))
}

pub(crate) fn serve_with_log(
    mut policy: AgentPolicy,
    bugs: SeededBugs,
    log: Arc<EventLog>,
) -> Result<AgentHandle, AgentError> {
    policy.validate()?;
    for dir in [
        &policy.script_dir,
        &policy.profile_dir,
        &policy.allowed_temp_prefix,
    ] {
        std::fs::create_dir_all(dir)?;
    }
    let listener = TcpListener::bind((policy.bind_ip, policy.port)).map_err(|e| {
        if e.kind() == ErrorKind::AddrInUse {
            AgentError::PortInUse(policy.port)
        } else {
            AgentError::Io(e)
        }
    })?;
    let addr = listener.local_addr()?;
    policy.port = addr.port();

    let first = Arc::new(Instance::new(policy.clone(), bugs, log.clone(), addr));
    log.append(EventKind::Started { port: addr.port() });
    let shared = Arc::new(Shared {
        stopped: AtomicBool::new(false),
        current: Mutex::new(first),
        log,
    });
    let sup_shared = shared.clone();
    let supervisor = thread::Builder::new()
        .name("ocsc-agent".into())
        .spawn(move || supervise(listener, policy, bugs, sup_shared))?;
    Ok(AgentHandle {
        addr,
        shared,
        supervisor: Some(supervisor),
    })
}

fn supervise(
    mut listener: TcpListener,
    policy: AgentPolicy,
    bugs: SeededBugs,
    shared: Arc<Shared>,
) {
    loop {
        let inst = shared.current.lock().unwrap().clone();
        for stream in listener.incoming() {
            if !inst.is_alive() {
                break;
            }
            if let Ok(stream) = stream {
                let inst = inst.clone();
                let _ = thread::Builder::new()
                    .name("ocsc-conn".into())
                    .spawn(move || serve_connection(inst, stream));
            }
        }
        drop(listener);
        if shared.stopped.load(Ordering::SeqCst) || !policy.restart_on_crash {
            return;
        }
        thread::sleep(policy.restart_delay);
        let Some(rebound) = rebind(inst.addr, &shared.stopped) else {
            return;
        };
        listener = rebound;
        let next = Instance::new(policy.clone(), bugs, shared.log.clone(), inst.addr);
        *shared.current.lock().unwrap() = Arc::new(next);
        shared.log.append(EventKind::Started {
            port: inst.addr.port(),
        });
    }
}

fn rebind(addr: SocketAddr, stopped: &AtomicBool) -> Option<TcpListener> {
    for _ in 0..REBIND_ATTEMPTS {
        if stopped.load(Ordering::SeqCst) {
            return None;
        }
        if let Ok(l) = TcpListener::bind(addr) {
            return Some(l);
        }
        thread::sleep(Duration::from_millis(10));
    }
    None
}

fn serve_connection(inst: Arc<Instance>, mut stream: TcpStream) {
    let id = inst.next_conn.fetch_add(1, Ordering::SeqCst);
    {
        let mut core = inst.core.lock().unwrap();
        if !inst.is_alive() {
            return;
        }
        core.open_connection(id);
        if let Ok(clone) = stream.try_clone() {
            inst.conns.lock().unwrap().insert(id, clone);
        }
    }
    let _ = stream.set_read_timeout(Some(IDLE_FLUSH));

    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        let (eof, idle) = match stream.read(&mut chunk) {
            Ok(0) => (true, false),
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                (false, false)
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                (false, true)
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(_) => break,
        };
        if !inst.is_alive() {
            return;
        }
        let flush = eof || idle || buf.len() > MAX_BUFFERED;
        while let Some(extract) = next_frame(&mut buf, flush) {
            let response = {
                let mut core = inst.core.lock().unwrap();
                if !inst.is_alive() {
                    return;
                }
                core.handle_frame(&extract.frame, &extract.excess, id, Instant::now())
            };
            if response.crash.is_some() {
                inst.die();
                return;
            }
            if let Some(at) = response.death_at {
                schedule_death(Arc::downgrade(&inst), at);
            }
            for reply in &response.replies {
                let _ = stream.write_all(reply);
            }
        }
        if eof {
            break;
        }
    }

    let still_up = {
        let mut core = inst.core.lock().unwrap();
        core.close_connection(id);
        inst.conns.lock().unwrap().remove(&id);
        inst.is_alive()
    };
    if still_up {
        let _ = stream.write_all(&inst.close_marker);
    }
    let _ = stream.shutdown(Shutdown::Both);
}

fn schedule_death(inst: Weak<Instance>, at: Instant) {
    let _ = thread::Builder::new()
        .name("ocsc-b3-timer".into())
        .spawn(move || {
            thread::sleep(at.saturating_duration_since(Instant::now()));
            let Some(inst) = inst.upgrade() else { return };
            let fired = {
                let mut core = inst.core.lock().unwrap();
                inst.is_alive() && core.fire_timer().is_some()
            };
            if fired {
                inst.die();
            }
        });
}

impl AgentHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.shared.log
    }

    /// Whether the current instance is up. Between a crash and a supervised
    /// restart this is false.
    pub fn is_alive(&self) -> bool {
        self.shared.current.lock().unwrap().is_alive()
    }

    /// Bug id of the most recent crash recorded in the event log.
    pub fn last_crash(&self) -> Option<BugId> {
        self.crashes().last().copied()
    }

    pub fn crashes(&self) -> Vec<BugId> {
        self.shared
            .log
            .snapshot()
            .into_iter()
            .filter_map(|e| match e.kind {
                EventKind::Crash { bug } => Some(bug),
                _ => None,
            })
            .collect()
    }

    /// Runs `f` inside the agent's critical section.
    pub fn with_core<R>(&self, f: impl FnOnce(&mut AgentCore) -> R) -> R {
        let inst = self.shared.current.lock().unwrap().clone();
        let mut core = inst.core.lock().unwrap();
        f(&mut core)
    }

    /// Blocks until the agent is down or `timeout` passes.
    pub fn wait_dead(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if !self.is_alive() {
                return true;
            }
            thread::sleep(Duration::from_millis(5));
        }
        !self.is_alive()
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.shared.stopped.store(true, Ordering::SeqCst);
        self.shared.current.lock().unwrap().die();
        if let Some(t) = self.supervisor.take() {
            let _ = t.join();
        }
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{reference, serialize, Profile};
    use std::net::Shutdown;

    fn start(
        bugs: SeededBugs,
        tweak: impl FnOnce(&mut AgentPolicy),
    ) -> (tempfile::TempDir, AgentHandle) {
        let dir = tempfile::tempdir().unwrap();
        let mut policy = AgentPolicy::new(dir.path()).with_port(0);
        tweak(&mut policy);
        let handle = serve(policy, bugs).unwrap();
        (dir, handle)
    }

    fn exchange(addr: SocketAddr, bytes: &[u8]) -> Vec<u8> {
        let mut s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        s.write_all(bytes).unwrap();
        s.shutdown(Shutdown::Write).unwrap();
        let mut out = Vec::new();
        let _ = s.read_to_end(&mut out);
        out
    }

    fn marker() -> Vec<u8> {
        serialize(&build_keepalive(&Profile::default())).unwrap()
    }

    #[test]
    fn clean_session_ends_with_marker() {
        let (_d, agent) = start(SeededBugs::none(), |_| {});
        let out = exchange(agent.addr(), &reference::script_deploy_frame());
        assert!(out.ends_with(&marker()));
        assert!(out.len() > marker().len(), "ack expected before the marker");
        assert!(agent.is_alive());
    }

    #[test]
    fn b2_closes_socket_and_listener() {
        let (_d, agent) = start(SeededBugs::only(BugId::B2), |_| {});
        let mut raw = reference::script_deploy_frame();
        raw[6..8].copy_from_slice(&[0, 0]);
        assert!(exchange(agent.addr(), &raw).is_empty());
        assert!(agent.wait_dead(Duration::from_secs(1)));
        assert_eq!(agent.last_crash(), Some(BugId::B2));
        thread::sleep(Duration::from_millis(50));
        assert!(TcpStream::connect(agent.addr()).is_err());
    }

    #[test]
    fn supervisor_restarts_on_same_port() {
        let (_d, agent) = start(SeededBugs::only(BugId::B2), |p| {
            p.restart_on_crash = true;
            p.restart_delay = Duration::from_millis(10);
        });
        let mut raw = reference::script_deploy_frame();
        raw[6..8].copy_from_slice(&[0, 0]);
        for _ in 0..2 {
            assert!(exchange(agent.addr(), &raw).is_empty());
            let deadline = Instant::now() + Duration::from_secs(3);
            while !agent.is_alive() && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(5));
            }
            // wait for the listener too
            let mut up = false;
            while Instant::now() < deadline && !up {
                up = exchange(agent.addr(), &[]).ends_with(&marker());
            }
            assert!(up);
        }
        assert_eq!(agent.crashes(), vec![BugId::B2, BugId::B2]);
    }

    #[test]
    fn port_in_use_is_reported() {
        let (_d, agent) = start(SeededBugs::none(), |_| {});
        let dir = tempfile::tempdir().unwrap();
        let policy = AgentPolicy::new(dir.path()).with_port(agent.port());
        assert!(matches!(
            serve(policy, SeededBugs::none()),
            Err(AgentError::PortInUse(_))
        ));
    }
}
