use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FuzzSequence, OrchestratorError, Outcome, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    SocketClosed,
    ProbeFailed,
    DelayedDeath,
}

impl Detection {
    pub fn of(outcome: Outcome) -> Option<Detection> {
        match outcome {
            Outcome::Ok => None,
            Outcome::SocketClosed => Some(Detection::SocketClosed),
            Outcome::ProbeFailed => Some(Detection::ProbeFailed),
            Outcome::DelayedDeath { .. } => Some(Detection::DelayedDeath),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Detection::SocketClosed => "socket_closed",
            Detection::ProbeFailed => "probe_failed",
            Detection::DelayedDeath => "delayed_death",
        }
    }
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Detection {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "socket_closed" => Ok(Detection::SocketClosed),
            "probe_failed" => Ok(Detection::ProbeFailed),
            "delayed_death" => Ok(Detection::DelayedDeath),
            other => Err(OrchestratorError::Report(format!(
                "unknown detection {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashReport {
    pub sequence: FuzzSequence,
    pub detection: Detection,
    pub latency_ms: u64,
    pub bug_id: Option<String>,
    pub bucket: String,
    pub timestamp_ms: u64,
    /// Campaign settings in effect, as `key=value` pairs.
    pub config: Vec<(String, String)>,
}

impl CrashReport {
    /// Flat text form: `key=value` lines, then one `step` line per step.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# ocsc crash report\n");
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k}={v}\n"));
        }
        out.push_str(&format!("detection={}\n", self.detection));
        out.push_str(&format!("latency_ms={}\n", self.latency_ms));
        out.push_str(&format!(
            "bug_id={}\n",
            self.bug_id.as_deref().unwrap_or("")
        ));
        out.push_str(&format!("bucket={}\n", self.bucket));
        out.push_str(&format!("timestamp_ms={}\n", self.timestamp_ms));
        out.push_str(&format!("parallel={}\n", self.sequence.parallel));
        for s in &self.sequence.steps {
            out.push_str(&format!(
                "step lane={} delay_ms={} frame={}\n",
                s.lane,
                s.pre_delay_ms,
                hex::encode(&s.frame)
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<CrashReport, OrchestratorError> {
        let bad = |msg: String| OrchestratorError::Report(msg);
        let mut config = Vec::new();
        let mut detection = None;
        let mut latency_ms = 0;
        let mut bug_id = None;
        let mut bucket = String::new();
        let mut timestamp_ms = 0;
        let mut parallel = false;
        let mut steps = Vec::new();

        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("step ") {
                steps.push(parse_step(rest).map_err(|e| bad(format!("line {}: {e}", n + 1)))?);
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", n + 1)))?;
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| bad(format!("line {}: bad number {v:?}", n + 1)))
            };
            match key {
                "detection" => detection = Some(value.parse()?),
                "latency_ms" => latency_ms = num(value)?,
                "bug_id" => bug_id = (!value.is_empty()).then(|| value.to_string()),
                "bucket" => bucket = value.to_string(),
                "timestamp_ms" => timestamp_ms = num(value)?,
                "parallel" => {
                    parallel = value
                        .parse()
                        .map_err(|_| bad(format!("line {}: bad flag {value:?}", n + 1)))?
                }
                k => match k.strip_prefix("config.") {
                    Some(ck) => config.push((ck.to_string(), value.to_string())),
                    None => return Err(bad(format!("line {}: unknown key {k:?}", n + 1))),
                },
            }
        }
        let sequence = FuzzSequence { steps, parallel };
        sequence.validate()?;
        Ok(CrashReport {
            sequence,
            detection: detection.ok_or_else(|| bad("missing detection".into()))?,
            latency_ms,
            bug_id,
            bucket,
            timestamp_ms,
            config,
        })
    }

    pub fn load(path: &Path) -> Result<CrashReport, OrchestratorError> {
        CrashReport::parse(&fs::read_to_string(path)?)
    }

    /// Writes `crash-<bucket>-<n>.txt` under `dir` without overwriting.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf, OrchestratorError> {
        fs::create_dir_all(dir)?;
        let stem: String = self
            .bucket
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        for n in 0.. {
            let path = dir.join(format!("crash-{stem}-{n}.txt"));
            if !path.exists() {
                fs::write(&path, self.to_text())?;
                return Ok(path);
            }
        }
        unreachable!()
    }
}

fn parse_step(rest: &str) -> Result<Step, String> {
    let mut step = Step::new(Vec::new());
    let mut have_frame = false;
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or(format!("bad field {field:?}"))?;
        match k {
            "lane" => step.lane = v.parse().map_err(|_| format!("bad lane {v:?}"))?,
            "delay_ms" => step.pre_delay_ms = v.parse().map_err(|_| format!("bad delay {v:?}"))?,
            "frame" => {
                step.frame = hex::decode(v).map_err(|e| format!("bad frame hex: {e}"))?;
                have_frame = true;
            }
            _ => return Err(format!("unknown step field {k:?}")),
        }
    }
    if !have_frame {
        return Err("step without frame".into());
    }
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::reference;

    fn sample() -> CrashReport {
        let mut seq = FuzzSequence::parallel(vec![reference::script_deploy_frame(), vec![1, 2]]);
        seq.steps[1].pre_delay_ms = 7;
        CrashReport {
            sequence: seq,
            detection: Detection::DelayedDeath,
            latency_ms: 2043,
            bug_id: Some("B3".into()),
            bucket: "bug-B3".into(),
            timestamp_ms: 1_700_000_000_000,
            config: vec![("window_ms".into(), "5000".into())],
        }
    }

    #[test]
    fn text_round_trip() {
        let r = sample();
        let text = r.to_text();
        assert!(text.contains("detection=delayed_death\n"));
        assert!(text.contains("step lane=1 delay_ms=7 frame=0102\n"));
        assert_eq!(CrashReport::parse(&text).unwrap(), r);

        let mut none = r.clone();
        none.bug_id = None;
        assert_eq!(CrashReport::parse(&none.to_text()).unwrap(), none);
    }

    #[test]
    fn malformed_reports_are_rejected() {
        assert!(CrashReport::parse("detection=socket_closed\n").is_err());
        assert!(CrashReport::parse("detection=boom\nstep lane=0 frame=00\n").is_err());
        assert!(CrashReport::parse("detection=socket_closed\nstep lane=0 frame=zz\n").is_err());
        assert!(CrashReport::parse("nonsense\n").is_err());
    }

    #[test]
    fn write_does_not_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let a = sample().write_to(dir.path()).unwrap();
        let b = sample().write_to(dir.path()).unwrap();
        assert_ne!(a, b);
        assert_eq!(CrashReport::load(&b).unwrap(), sample());
    }
}
