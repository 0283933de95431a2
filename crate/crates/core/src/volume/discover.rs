use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{is_dicom_file, Result, VolumeError};

/// A series directory must hold strictly more files than this to be processed in 3D.
pub const DEFAULT_SERIES_THRESHOLD: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesCandidate {
    pub directory: PathBuf,
    pub file_count: usize,
    pub is_3d_eligible: bool,
}

/// Number of direct children when every one of them is a DICOM file, else `None`.
fn dicom_only_count(dir: &Path) -> Option<usize> {
    let entries = std::fs::read_dir(dir).ok()?;
    let mut count = 0;
    for entry in entries {
        let path = entry.ok()?.path();
        if !path.is_file() || !is_dicom_file(&path) {
            return None;
        }
        count += 1;
    }
    (count > 0).then_some(count)
}

/// Recursively finds directories (including `root`) whose direct children are
/// all DICOM files. Results are sorted by path.
pub fn discover_series(root: &Path, threshold: usize) -> Result<Vec<SeriesCandidate>> {
    if !root.is_dir() {
        return Err(VolumeError::RootNotFound(root.to_path_buf()));
    }
    let mut out: Vec<SeriesCandidate> = WalkDir::new(root)
        .follow_links(true)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_dir())
        .filter_map(|e| {
            dicom_only_count(e.path()).map(|n| SeriesCandidate {
                directory: e.path().to_path_buf(),
                file_count: n,
                is_3d_eligible: n > threshold,
            })
        })
        .collect();
    out.sort_by(|a, b| a.directory.cmp(&b.directory));
    Ok(out)
}
