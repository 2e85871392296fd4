use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::FeatureError;

/// The 30 command words of the original speech-commands release.
pub const DEFAULT_CLASSES: [&str; 30] = [
    "bed", "bird", "cat", "dog", "down", "eight", "five", "four", "go", "happy", "house", "left",
    "marvin", "nine", "no", "off", "on", "one", "right", "seven", "sheila", "six", "stop", "three",
    "tree", "two", "up", "wow", "yes", "zero",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("split must be `train` or `test`, got `{other}`")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// As written in the manifest.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

/// Tab-separated `path<TAB>label<TAB>split` lines. Blank lines and `#`
/// comments are skipped; a `#classes a,b,c` line declares the label set
/// (default: [`DEFAULT_CLASSES`]). Relative paths resolve against `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self, FeatureError> {
        let bad = |line: usize, reason: String| FeatureError::Manifest { line, reason };
        let mut classes: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
        let mut declared = false;
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if let Some(rest) = line.strip_prefix("#classes") {
                if declared || !entries.is_empty() {
                    return Err(bad(line_no, "`#classes` must come once, before any record".into()));
                }
                classes = rest.split(',').map(|c| c.trim().to_string()).collect();
                if classes.iter().any(String::is_empty) {
                    return Err(bad(line_no, "empty class name".into()));
                }
                if classes.iter().collect::<HashSet<_>>().len() != classes.len() {
                    return Err(bad(line_no, "duplicate class name".into()));
                }
                declared = true;
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, label, split] = fields[..] else {
                return Err(bad(line_no, format!("expected 3 tab-separated fields, found {}", fields.len())));
            };
            let label = classes
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| bad(line_no, format!("unknown label `{label}`")))?;
            let split = split.parse().map_err(|e| bad(line_no, e))?;
            if !seen.insert(path.to_string()) {
                return Err(bad(line_no, format!("duplicate path `{path}`")));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                label,
                split,
            });
        }
        Ok(Self {
            classes,
            entries,
            root: root.into(),
        })
    }

    /// Read a manifest file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// Same manifest restricted to one split.
    pub fn filter_split(&self, split: Split) -> Manifest {
        Manifest {
            classes: self.classes.clone(),
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
            root: self.root.clone(),
        }
    }
}
