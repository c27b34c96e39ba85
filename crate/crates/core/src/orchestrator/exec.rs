use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::FuzzSequence;
use crate::codec::{build_keepalive, serialize_with, Profile};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    /// Per-connection read and connect timeout.
    pub timeout: Duration,
    /// How long to keep probing after the last step; zero skips probing.
    pub window: Duration,
    pub probe_interval: Duration,
    /// How long a parallel lane keeps its connection open after writing.
    pub hold: Duration,
    pub close_marker: Vec<u8>,
}

impl Default for Observation {
    fn default() -> Self {
        Observation {
            timeout: Duration::from_millis(1000),
            window: Duration::from_millis(5000),
            probe_interval: Duration::from_millis(100),
            hold: Duration::from_millis(25),
            close_marker: session_close_marker(&Profile::default()),
        }
    }
}

impl Observation {
    pub fn with_window(mut self, window: Duration) -> Self {
        self.window = window;
        self
    }

    /// Same settings without the post-send observation window.
    pub fn quick(&self) -> Self {
        self.clone().with_window(Duration::ZERO)
    }
}

pub fn session_close_marker(profile: &Profile) -> Vec<u8> {
    serialize_with(&build_keepalive(profile), profile).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    SocketClosed,
    ProbeFailed,
    DelayedDeath { latency_ms: u64 },
}

impl Outcome {
    pub fn is_ok(self) -> bool {
        self == Outcome::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecResult {
    pub outcome: Outcome,
    /// Index of the first step whose connection failed, if any.
    pub failed_step: Option<usize>,
    /// Time from the end of the last step to the failed probe.
    pub latency: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Alive,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepResult {
    Done,
    Refused,
    Cut,
}

fn finish_session(stream: &mut TcpStream, obs: &Observation) -> StepResult {
    let _ = stream.set_read_timeout(Some(obs.timeout));
    let mut received = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => received.extend_from_slice(&chunk[..n]),
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            // A hung peer is not a dead one.
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                return StepResult::Done
            }
            Err(_) => return StepResult::Cut,
        }
    }
    if !obs.close_marker.is_empty() && received.ends_with(&obs.close_marker) {
        StepResult::Done
    } else {
        StepResult::Cut
    }
}

fn send_step(addr: SocketAddr, frame: &[u8], hold: Duration, obs: &Observation) -> StepResult {
    let Ok(mut stream) = TcpStream::connect_timeout(&addr, obs.timeout) else {
        return StepResult::Refused;
    };
    let _ = stream.set_nodelay(true);
    if stream.write_all(frame).is_err() {
        return StepResult::Cut;
    }
    if !hold.is_zero() {
        thread::sleep(hold);
    }
    if stream.shutdown(Shutdown::Write).is_err() {
        return StepResult::Cut;
    }
    finish_session(&mut stream, obs)
}

/// Connect, half-close without sending anything and wait for the agent to
/// close the session. Sends no frame, so it cannot feed a stateful bug.
pub fn probe_liveness(addr: SocketAddr, obs: &Observation) -> Liveness {
    match send_step(addr, &[], Duration::ZERO, obs) {
        StepResult::Done => Liveness::Alive,
        _ => Liveness::Dead,
    }
}

fn run_steps(seq: &FuzzSequence, addr: SocketAddr, obs: &Observation) -> Vec<StepResult> {
    if !seq.parallel {
        let mut results = Vec::with_capacity(seq.steps.len());
        for step in &seq.steps {
            if step.pre_delay_ms > 0 {
                thread::sleep(Duration::from_millis(step.pre_delay_ms));
            }
            let r = send_step(addr, &step.frame, Duration::ZERO, obs);
            results.push(r);
            if r != StepResult::Done {
                break;
            }
        }
        return results;
    }

    let lanes = seq.lanes();
    let barrier = Arc::new(Barrier::new(lanes));
    let mut handles = Vec::with_capacity(lanes);
    for lane in 0..lanes {
        let steps: Vec<(usize, Vec<u8>, u64)> = seq
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.lane as usize == lane)
            .map(|(i, s)| (i, s.frame.clone(), s.pre_delay_ms))
            .collect();
        let barrier = barrier.clone();
        let obs = obs.clone();
        handles.push(thread::spawn(move || {
            barrier.wait();
            let mut out = Vec::new();
            for (i, frame, delay) in steps {
                if delay > 0 {
                    thread::sleep(Duration::from_millis(delay));
                }
                let r = send_step(addr, &frame, obs.hold, &obs);
                out.push((i, r));
                if r != StepResult::Done {
                    break;
                }
            }
            out
        }));
    }
    let mut results: Vec<Option<StepResult>> = vec![None; seq.steps.len()];
    for h in handles {
        for (i, r) in h.join().unwrap_or_default() {
            results[i] = Some(r);
        }
    }
    results
        .into_iter()
        .map(|r| r.unwrap_or(StepResult::Refused))
        .collect()
}

/// Sends `seq` and classifies what happened to the target.
pub fn execute_sequence(seq: &FuzzSequence, addr: SocketAddr, obs: &Observation) -> ExecResult {
    let results = run_steps(seq, addr, obs);
    if let Some((i, r)) = results
        .iter()
        .enumerate()
        .find(|(_, r)| **r != StepResult::Done)
    {
        let outcome = match r {
            StepResult::Refused => Outcome::ProbeFailed,
            _ => Outcome::SocketClosed,
        };
        return ExecResult {
            outcome,
            failed_step: Some(i),
            latency: Duration::ZERO,
        };
    }

    let (outcome, latency) = observe(addr, obs, Instant::now());
    ExecResult {
        outcome,
        failed_step: None,
        latency,
    }
}

/// Probes every interval until `obs.window` after `end` has passed.
pub(crate) fn observe(addr: SocketAddr, obs: &Observation, end: Instant) -> (Outcome, Duration) {
    if obs.window.is_zero() {
        return (Outcome::Ok, Duration::ZERO);
    }
    loop {
        let probe_at = Instant::now();
        if probe_liveness(addr, obs) == Liveness::Dead {
            let latency = probe_at.saturating_duration_since(end);
            let outcome = if latency > obs.timeout {
                Outcome::DelayedDeath {
                    latency_ms: latency.as_millis() as u64,
                }
            } else {
                Outcome::ProbeFailed
            };
            return (outcome, latency);
        }
        let elapsed = end.elapsed();
        if elapsed >= obs.window {
            return (Outcome::Ok, Duration::ZERO);
        }
        thread::sleep(obs.probe_interval.min(obs.window - elapsed));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn no_listener_is_dead() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        drop(l);
        let obs = Observation::default();
        assert_eq!(probe_liveness(addr, &obs), Liveness::Dead);
        let r = execute_sequence(&FuzzSequence::single(vec![1, 2, 3]), addr, &obs);
        assert_eq!(r.outcome, Outcome::ProbeFailed);
        assert_eq!(r.failed_step, Some(0));
    }

    #[test]
    fn accept_then_close_is_dead() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        let t = thread::spawn(move || {
            for s in l.incoming().take(1) {
                drop(s);
            }
        });
        assert_eq!(
            probe_liveness(addr, &Observation::default()),
            Liveness::Dead
        );
        t.join().unwrap();
    }
}
