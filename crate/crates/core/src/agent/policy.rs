use std::fmt;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::codec::Profile;

pub const DEFAULT_AGENT_PORT: u16 = 29754;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPolicy {
    /// Local-policy `RestrictScriptWebDeploy`; off unless an administrator sets it.
    pub restrict_script_web_deploy: bool,
    pub bind_ip: IpAddr,
    pub port: u16,
    pub sandbox_root: PathBuf,
    pub script_dir: PathBuf,
    pub profile_dir: PathBuf,
    pub allowed_temp_prefix: PathBuf,
    /// Hardening toggle that the genuine installer check lacks.
    pub enforce_version_order: bool,
    pub installed_version: String,
    /// Restart after a crash, the way systemd restarts the daemon.
    pub restart_on_crash: bool,
    pub restart_delay: Duration,
    pub race_window: Duration,
    pub event_log: Option<PathBuf>,
    pub profile: Profile,
}

impl AgentPolicy {
    /// Default policy with the `<root>/{tmp,script,profile}` layout.
    pub fn new(sandbox_root: impl Into<PathBuf>) -> Self {
        let root = sandbox_root.into();
        AgentPolicy {
            restrict_script_web_deploy: false,
            bind_ip: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_AGENT_PORT,
            script_dir: root.join("script"),
            profile_dir: root.join("profile"),
            allowed_temp_prefix: root.join("tmp"),
            enforce_version_order: false,
            installed_version: "4.9.00086".into(),
            restart_on_crash: false,
            restart_delay: Duration::from_millis(100),
            race_window: Duration::from_millis(50),
            event_log: Some(root.join("agent-events.log")),
            profile: Profile::default(),
            sandbox_root: root,
        }
    }

    pub fn with_port(mut self, port: u16) -> Self {
        self.port = port;
        self
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let root = &self.sandbox_root;
        if !root.is_dir() {
            return Err(AgentError::BadSandbox(format!(
                "{} is not a directory",
                root.display()
            )));
        }
        for (name, dir) in [
            ("script_dir", &self.script_dir),
            ("profile_dir", &self.profile_dir),
            ("allowed_temp_prefix", &self.allowed_temp_prefix),
        ] {
            if !dir.starts_with(root) || dir.components().any(|c| c.as_os_str() == "..") {
                return Err(AgentError::BadSandbox(format!(
                    "{name} {} is outside {}",
                    dir.display(),
                    root.display()
                )));
            }
        }
        if let Some(log) = &self.event_log {
            if !log.starts_with(root) {
                return Err(AgentError::BadSandbox(format!(
                    "event log {} is outside {}",
                    log.display(),
                    root.display()
                )));
            }
        }
        if !self.bind_ip.is_loopback() {
            return Err(AgentError::BadSandbox(format!(
                "refusing to listen on non-loopback address {}",
                self.bind_ip
            )));
        }
        Ok(())
    }

    /// Applies the elements of an AnyConnect-style local policy document this
    /// agent understands. Only `RestrictScriptWebDeploy` is read.
    pub fn apply_local_policy(&mut self, xml: &str) {
        if let Some(v) = element_text(xml, "RestrictScriptWebDeploy") {
            self.restrict_script_web_deploy = v.eq_ignore_ascii_case("true");
        }
    }

    pub fn load_local_policy(&mut self, path: &Path) -> std::io::Result<()> {
        let xml = std::fs::read_to_string(path)?;
        self.apply_local_policy(&xml);
        Ok(())
    }
}

/// Text content of the first `<name ...>text</name>` element.
pub(crate) fn element_text<'a>(xml: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<{name}");
    let mut from = 0;
    while let Some(i) = xml[from..].find(&open) {
        let start = from + i + open.len();
        let next = xml[start..].chars().next()?;
        if next == '>' || next.is_whitespace() {
            let gt = start + xml[start..].find('>')?;
            let text_end = gt + 1 + xml[gt + 1..].find('<')?;
            return Some(xml[gt + 1..text_end].trim());
        }
        from = start;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BugId {
    B1,
    B2,
    B3,
    B4,
}

impl fmt::Display for BugId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for BugId {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B1" => Ok(BugId::B1),
            "B2" => Ok(BugId::B2),
            "B3" => Ok(BugId::B3),
            "B4" => Ok(BugId::B4),
            _ => Err(AgentError::BadBugList(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededBugs {
    pub b1_race: bool,
    pub b2_double_free: bool,
    pub b3_timed_heap: bool,
    /// Shares the corrupt-heap flag with B3 and may be enabled on its own.
    pub b4_alloc_after_corrupt: bool,
    pub b3_timer: Duration,
}

impl Default for SeededBugs {
    fn default() -> Self {
        SeededBugs {
            b1_race: false,
            b2_double_free: false,
            b3_timed_heap: false,
            b4_alloc_after_corrupt: false,
            b3_timer: Duration::from_millis(2000),
        }
    }
}

impl SeededBugs {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        SeededBugs {
            b1_race: true,
            b2_double_free: true,
            b3_timed_heap: true,
            b4_alloc_after_corrupt: true,
            ..Self::default()
        }
    }

    pub fn only(bug: BugId) -> Self {
        Self::none().with(bug)
    }

    pub fn with(mut self, bug: BugId) -> Self {
        match bug {
            BugId::B1 => self.b1_race = true,
            BugId::B2 => self.b2_double_free = true,
            BugId::B3 => self.b3_timed_heap = true,
            BugId::B4 => self.b4_alloc_after_corrupt = true,
        }
        self
    }

    pub fn with_timer(mut self, timer: Duration) -> Self {
        self.b3_timer = timer;
        self
    }

    pub fn enabled(&self) -> Vec<BugId> {
        [
            (self.b1_race, BugId::B1),
            (self.b2_double_free, BugId::B2),
            (self.b3_timed_heap, BugId::B3),
            (self.b4_alloc_after_corrupt, BugId::B4),
        ]
        .into_iter()
        .filter_map(|(on, id)| on.then_some(id))
        .collect()
    }

    pub fn tracks_heap_corruption(&self) -> bool {
        self.b3_timed_heap || self.b4_alloc_after_corrupt
    }
}

impl FromStr for SeededBugs {
    type Err = AgentError;

    /// `none`, `all`, or a comma-separated list such as `b2,b3`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "" | "none" => Ok(Self::none()),
            "all" => Ok(Self::all()),
            list => list
                .split(',')
                .try_fold(Self::none(), |bugs, item| Ok(bugs.with(item.parse()?))),
        }
    }
}

impl fmt::Display for SeededBugs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids = self.enabled();
        if ids.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<String> = ids.iter().map(|b| b.to_string().to_lowercase()).collect();
        f.write_str(&names.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bug_list_parsing() {
        assert_eq!("none".parse::<SeededBugs>().unwrap(), SeededBugs::none());
        assert_eq!("all".parse::<SeededBugs>().unwrap(), SeededBugs::all());
        let bugs: SeededBugs = "b2, B3".parse().unwrap();
        assert_eq!(bugs.enabled(), vec![BugId::B2, BugId::B3]);
        assert_eq!(bugs.to_string(), "b2,b3");
        assert!("b5".parse::<SeededBugs>().is_err());
    }

    #[test]
    fn local_policy_element() {
        let mut policy = AgentPolicy::new("/nonexistent");
        assert!(!policy.restrict_script_web_deploy);
        policy.apply_local_policy(
            "<AnyConnectLocalPolicy>\n  <RestrictScriptWebDeploy>true</RestrictScriptWebDeploy>\n</AnyConnectLocalPolicy>",
        );
        assert!(policy.restrict_script_web_deploy);
        policy.apply_local_policy("<RestrictScriptWebDeploy>false</RestrictScriptWebDeploy>");
        assert!(!policy.restrict_script_web_deploy);
    }

    #[test]
    fn element_text_skips_prefix_matches() {
        let xml = "<EnableScriptingX>no</EnableScriptingX><EnableScripting UserControllable=\"false\">true</EnableScripting>";
        assert_eq!(element_text(xml, "EnableScripting"), Some("true"));
    }

    #[test]
    fn validate_rejects_escaping_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let mut policy = AgentPolicy::new(dir.path());
        policy.validate().unwrap();
        policy.script_dir = PathBuf::from("/opt/cisco/anyconnect/script");
        assert!(matches!(policy.validate(), Err(AgentError::BadSandbox(_))));
        let missing = AgentPolicy::new(dir.path().join("missing"));
        assert!(matches!(missing.validate(), Err(AgentError::BadSandbox(_))));
    }
}
