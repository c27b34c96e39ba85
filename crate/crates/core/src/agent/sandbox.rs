use std::path::{Component, Path, PathBuf};

use super::AgentPolicy;

/// Maps wire paths into the sandbox root and refuses anything that would
/// resolve outside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sandbox {
    root: PathBuf,
    script_dir: PathBuf,
    profile_dir: PathBuf,
    temp_dir: PathBuf,
    aliases: Vec<(PathBuf, PathBuf)>,
}

impl Sandbox {
    pub fn new(policy: &AgentPolicy) -> Self {
        let root = policy
            .sandbox_root
            .canonicalize()
            .unwrap_or_else(|_| policy.sandbox_root.clone());
        let rebase = |p: &Path| match p.strip_prefix(&policy.sandbox_root) {
            Ok(rel) => root.join(rel),
            Err(_) => p.to_path_buf(),
        };
        let script_dir = rebase(&policy.script_dir);
        let profile_dir = rebase(&policy.profile_dir);
        let temp_dir = rebase(&policy.allowed_temp_prefix);
        let aliases = vec![
            (
                PathBuf::from("/opt/cisco/anyconnect/script"),
                script_dir.clone(),
            ),
            (
                PathBuf::from("/opt/cisco/anyconnect/profile"),
                profile_dir.clone(),
            ),
            (PathBuf::from("/tmp"), temp_dir.clone()),
        ];
        Sandbox {
            root,
            script_dir,
            profile_dir,
            temp_dir,
            aliases,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn script_dir(&self) -> &Path {
        &self.script_dir
    }

    pub fn profile_dir(&self) -> &Path {
        &self.profile_dir
    }

    pub fn temp_dir(&self) -> &Path {
        &self.temp_dir
    }

    /// Resolves a path as sent on the wire. Paths already under the root are
    /// taken as-is, well-known install directories map onto their sandbox
    /// counterparts, and any other absolute path is re-rooted.
    pub fn resolve(&self, wire: &str) -> Option<PathBuf> {
        if wire.is_empty() || wire.contains('\0') {
            return None;
        }
        let raw = Path::new(wire);
        let candidate = if !raw.is_absolute() {
            self.root.join(raw)
        } else if raw.starts_with(&self.root) {
            raw.to_path_buf()
        } else if let Some((from, to)) = self.aliases.iter().find(|(from, _)| raw.starts_with(from))
        {
            to.join(raw.strip_prefix(from).ok()?)
        } else {
            self.root.join(raw.strip_prefix("/").ok()?)
        };
        let normalized = normalize(&candidate)?;
        self.contains(&normalized).then_some(normalized)
    }

    /// Lexical containment plus a symlink check on the deepest existing ancestor.
    pub fn contains(&self, path: &Path) -> bool {
        let Some(normalized) = normalize(path) else {
            return false;
        };
        if !normalized.starts_with(&self.root) {
            return false;
        }
        let mut probe = normalized.as_path();
        loop {
            if let Ok(real) = probe.canonicalize() {
                return real.starts_with(&self.root);
            }
            match probe.parent() {
                Some(parent) => probe = parent,
                None => return false,
            }
        }
    }
}

fn normalize(path: &Path) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    for comp in path.components() {
        match comp {
            Component::ParentDir => {
                if !out.pop() {
                    return None;
                }
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sandbox() -> (tempfile::TempDir, Sandbox) {
        let dir = tempfile::tempdir().unwrap();
        let sb = Sandbox::new(&AgentPolicy::new(dir.path()));
        (dir, sb)
    }

    #[test]
    fn listing_paths_map_into_layout() {
        let (_dir, sb) = sandbox();
        assert_eq!(
            sb.resolve("/tmp/.acH1J33B/OnConnect_little").unwrap(),
            sb.root().join("tmp/.acH1J33B/OnConnect_little")
        );
        assert_eq!(
            sb.resolve("/opt/cisco/anyconnect/script/OnConnect_little")
                .unwrap(),
            sb.root().join("script/OnConnect_little")
        );
        assert_eq!(
            sb.resolve("/etc/passwd").unwrap(),
            sb.root().join("etc/passwd")
        );
    }

    #[test]
    fn traversal_is_refused() {
        let (_dir, sb) = sandbox();
        let escape = format!("{}/../../etc/shadow", sb.root().display());
        assert_eq!(sb.resolve(&escape), None);
        assert_eq!(sb.resolve("/tmp/../../../../etc/shadow"), None);
        assert!(sb.resolve("/tmp/a/../b").is_some());
    }

    #[test]
    fn symlink_escape_is_refused() {
        let (_dir, sb) = sandbox();
        let outside = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(sb.root().join("tmp")).unwrap();
        std::os::unix::fs::symlink(outside.path(), sb.root().join("tmp/link")).unwrap();
        assert_eq!(sb.resolve("/tmp/link/file"), None);
    }
}
