//! Toolkit for the OCSC local IPC protocol: a bit-exact codec, a seedable
//! mutation engine, a stateful blackbox TCP fuzzer with replay, minimization
//! and bucketing, and a sandboxed mock agent with seeded bugs.

pub mod agent;
pub mod codec;
pub mod mutate;
pub mod orchestrator;
pub mod scenario;
