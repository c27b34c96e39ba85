use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::{Observation, OrchestratorError};
use crate::agent::DEFAULT_AGENT_PORT;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignConfig {
    pub host: String,
    pub port: u16,
    pub seeds_dir: Option<PathBuf>,
    pub workdir: PathBuf,
    pub max_execs: u64,
    pub timeout_ms: u64,
    /// Observation window for delayed death, used while triaging.
    pub window_ms: u64,
    pub probe_interval_ms: u64,
    /// Upper bound on concurrent lanes; 1 disables parallel sequences.
    pub lanes: u8,
    pub max_steps: usize,
    pub rng_seed: u64,
    /// Run every structural candidate of every parsed seed first.
    pub structural: bool,
    pub stop_on_crash: bool,
    pub minimize_bytes: bool,
    pub hold_ms: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            host: "127.0.0.1".into(),
            port: DEFAULT_AGENT_PORT,
            seeds_dir: None,
            workdir: PathBuf::from("ocsc-work"),
            max_execs: 10_000,
            timeout_ms: 1000,
            window_ms: 5000,
            probe_interval_ms: 100,
            lanes: 2,
            max_steps: 4,
            rng_seed: 0,
            structural: true,
            stop_on_crash: false,
            minimize_bytes: false,
            hold_ms: 25,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, OrchestratorError> {
    value
        .parse()
        .map_err(|_| OrchestratorError::Config(format!("{key}: cannot parse {value:?}")))
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let err = |m: &str| Err(OrchestratorError::Config(m.into()));
        if self.window_ms < self.timeout_ms {
            return err("window_ms must be at least timeout_ms");
        }
        if self.lanes == 0 {
            return err("lanes must be at least 1");
        }
        if self.max_steps == 0 {
            return err("max_steps must be at least 1");
        }
        if self.probe_interval_ms == 0 || self.timeout_ms == 0 {
            return err("timeout_ms and probe_interval_ms must be positive");
        }
        Ok(())
    }

    pub fn observation(&self) -> Observation {
        Observation {
            timeout: Duration::from_millis(self.timeout_ms),
            window: Duration::from_millis(self.window_ms),
            probe_interval: Duration::from_millis(self.probe_interval_ms),
            hold: Duration::from_millis(self.hold_ms),
            ..Observation::default()
        }
    }

    pub fn target(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), OrchestratorError> {
        match key {
            "host" => self.host = value.to_string(),
            "port" => self.port = parse_num(key, value)?,
            "target" => {
                let (host, port) = value.rsplit_once(':').ok_or_else(|| {
                    OrchestratorError::Config(format!("target: expected host:port, got {value:?}"))
                })?;
                self.host = host.to_string();
                self.port = parse_num(key, port)?;
            }
            "seeds" | "seeds_dir" => {
                self.seeds_dir = (!value.is_empty()).then(|| PathBuf::from(value))
            }
            "workdir" => self.workdir = PathBuf::from(value),
            "max_execs" => self.max_execs = parse_num(key, value)?,
            "timeout_ms" => self.timeout_ms = parse_num(key, value)?,
            "window_ms" => self.window_ms = parse_num(key, value)?,
            "probe_interval_ms" => self.probe_interval_ms = parse_num(key, value)?,
            "lanes" => self.lanes = parse_num(key, value)?,
            "max_steps" => self.max_steps = parse_num(key, value)?,
            "rng_seed" => self.rng_seed = parse_num(key, value)?,
            "structural" => self.structural = parse_num(key, value)?,
            "stop_on_crash" => self.stop_on_crash = parse_num(key, value)?,
            "minimize_bytes" => self.minimize_bytes = parse_num(key, value)?,
            "hold_ms" => self.hold_ms = parse_num(key, value)?,
            other => return Err(OrchestratorError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), OrchestratorError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                OrchestratorError::Config(format!("line {}: expected key=value", n + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CampaignConfig, OrchestratorError> {
        let mut cfg = CampaignConfig::default();
        cfg.apply_text(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let seeds = self
            .seeds_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        [
            ("target", self.target()),
            ("seeds", seeds),
            ("workdir", self.workdir.display().to_string()),
            ("max_execs", self.max_execs.to_string()),
            ("timeout_ms", self.timeout_ms.to_string()),
            ("window_ms", self.window_ms.to_string()),
            ("probe_interval_ms", self.probe_interval_ms.to_string()),
            ("lanes", self.lanes.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
            ("structural", self.structural.to_string()),
            ("stop_on_crash", self.stop_on_crash.to_string()),
            ("minimize_bytes", self.minimize_bytes.to_string()),
            ("hold_ms", self.hold_ms.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
