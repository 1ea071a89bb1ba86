//! Dataset manifests: one image path per line, `#` comments.
//!
//! Relative paths resolve against the manifest's directory. Entries are
//! iterated in sorted order.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{manifest}: line {line}: `{entry}` does not exist")]
    Missing { manifest: PathBuf, line: usize, entry: PathBuf },
    #[error("{manifest}: `{entry}` listed more than once")]
    Duplicate { manifest: PathBuf, entry: PathBuf },
    #[error("{0}: no images listed")]
    Empty(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    /// File stem of the manifest, used as the dataset name in reports.
    pub name: String,
    pub paths: Vec<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut paths = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let entry = base.join(line);
            if !entry.is_file() {
                return Err(ManifestError::Missing { manifest: path.into(), line: i + 1, entry });
            }
            paths.push(entry);
        }
        if paths.is_empty() {
            return Err(ManifestError::Empty(path.into()));
        }
        paths.sort();
        if let Some(w) = paths.windows(2).find(|w| w[0] == w[1]) {
            return Err(ManifestError::Duplicate { manifest: path.into(), entry: w[0].clone() });
        }
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Manifest { name, paths })
    }

    /// Writes a manifest listing `paths` one per line.
    pub fn write(path: &Path, paths: &[PathBuf]) -> std::io::Result<()> {
        let mut text = String::new();
        for p in paths {
            text.push_str(&p.to_string_lossy());
            text.push('\n');
        }
        std::fs::write(path, text)
    }
}
