use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Tracks files and directories a command creates; unless [`commit`] is
/// called, dropping the guard deletes them again so a failed run leaves no
/// half-written outputs behind.
///
/// [`commit`]: OutputGuard::commit
#[derive(Debug, Default)]
pub struct OutputGuard {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Create `dir` (and missing parents), remembering what did not exist.
    pub fn dir(&mut self, dir: &Path) -> Result<PathBuf> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur.filter(|d| !d.as_os_str().is_empty() && !d.exists()) {
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        // innermost last, so removal can walk the list in order
        missing.reverse();
        self.dirs.extend(missing);
        Ok(dir.to_path_buf())
    }

    /// Register a path that is about to be written by someone else.
    pub fn track(&mut self, path: &Path) -> PathBuf {
        self.files.push(path.to_path_buf());
        path.to_path_buf()
    }

    pub fn write(&mut self, path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
        self.track(path);
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir(d);
        }
    }
}
