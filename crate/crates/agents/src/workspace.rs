//! Per-session artifact directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub const EVENTS_FILE: &str = "events.ndjson";
pub const REPORT_FILE: &str = "report.md";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn create(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn spec_name(version: usize) -> String {
        format!("spec_v{version}.json")
    }

    pub fn plan_name(version: usize) -> String {
        format!("plan_v{version}.json")
    }

    pub fn history_name(run: usize) -> String {
        format!("history_v{run}.csv")
    }

    pub fn density_name(run: usize) -> String {
        format!("density_v{run}.png")
    }

    pub fn convergence_name(run: usize) -> String {
        format!("convergence_v{run}.png")
    }

    pub fn log_name(run: usize) -> String {
        format!("run_v{run}.log")
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> io::Result<()> {
        fs::write(self.path(name), contents)
    }

    /// Non-empty regular file `name` exists in the workspace.
    pub fn has_content(&self, name: &str) -> bool {
        fs::metadata(self.path(name)).is_ok_and(|m| m.is_file() && m.len() > 0)
    }

    /// File names in the workspace, sorted.
    pub fn list(&self) -> io::Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        Ok(names)
    }

    /// Resolves an artifact name, refusing anything that is not a plain file
    /// name.
    pub fn artifact(&self, name: &str) -> Option<PathBuf> {
        let plain = !name.is_empty()
            && !name.starts_with('.')
            && !name.contains(['/', '\\'])
            && Path::new(name).file_name().is_some_and(|f| f == name);
        let path = self.path(name);
        (plain && path.is_file()).then_some(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_names() {
        assert_eq!(Workspace::spec_name(2), "spec_v2.json");
        assert_eq!(Workspace::density_name(1), "density_v1.png");
    }

    #[test]
    fn artifact_lookup_rejects_traversal() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::create(dir.path().join("s")).unwrap();
        ws.write("report.md", "x").unwrap();
        assert!(ws.artifact("report.md").is_some());
        for bad in ["../s/report.md", "", ".", "..", "a/b", "missing.png"] {
            assert!(ws.artifact(bad).is_none(), "{bad}");
        }
        assert_eq!(ws.list().unwrap(), vec!["report.md".to_string()]);
        assert!(ws.has_content("report.md"));
    }
}
