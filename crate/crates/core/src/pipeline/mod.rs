//! End-to-end runs: discovery, per-series processing with failure isolation,
//! and the output tree `<root>/<Y-m-d_H-M-S>/<series>/{images,segmentations,metrics}`.

mod outputs;
mod run2d;
mod run3d;

use std::collections::HashSet;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::RenderError;
use crate::segmentation::{tissue_class_map, ProviderConfig, SegError, STANFORD_MODEL_ID};
use crate::spine::{RoiSpec, SpineError};
use crate::tissue::{PostProcessConfig, TissueError};
use crate::volume::{VolumeError, DEFAULT_SERIES_THRESHOLD};

pub use outputs::{
    csv_header_2d, csv_header_3d, read_tissue_h5, write_metrics_csv_2d, write_metrics_csv_3d, write_tissue_h5,
    MetricsRow, CSV_TISSUES,
};
pub use run2d::{find_dicom_files, run_pipeline_2d};
pub use run3d::{run_pipeline_3d, select_axial_index};

/// Environment variable overriding the default output root.
pub const OUTPUT_ROOT_ENV: &str = "C2C_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "outputs";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const OUTPUT_SUBDIRS: [&str; 3] = ["images", "segmentations", "metrics"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot create output directory {path}: {source}")]
    OutputRoot { path: PathBuf, source: io::Error },
    #[error("no vertebral level could be analyzed: {0}")]
    NoLevels(String),
    #[error("{path}: HDF5 error: {message}")]
    Hdf5 { path: PathBuf, message: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Segmentation(#[from] SegError),
    #[error(transparent)]
    Spine(#[from] SpineError),
    #[error(transparent)]
    Tissue(#[from] TissueError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "process_3d")]
    Process3d,
    #[serde(rename = "process_2d")]
    Process2d,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub input_path: PathBuf,
    /// Falls back to `$C2C_OUTPUT_ROOT`, then `./outputs`.
    pub output_root: Option<PathBuf>,
    pub roi_spec: RoiSpec,
    pub post: PostProcessConfig,
    pub spine_provider: ProviderConfig,
    pub tissue_provider: ProviderConfig,
    pub tissue_model_id: String,
    pub workers: usize,
    pub save_images: bool,
    pub series_threshold: usize,
}

impl RunConfig {
    /// Defaults with both providers reading precomputed masks under `mask_root`.
    pub fn with_mask_files(mode: Mode, input_path: impl Into<PathBuf>, mask_root: impl Into<PathBuf>) -> Self {
        let mask_root = mask_root.into();
        RunConfig {
            mode,
            input_path: input_path.into(),
            output_root: None,
            roi_spec: RoiSpec::default(),
            post: PostProcessConfig::default(),
            spine_provider: ProviderConfig::mask_files(&mask_root, crate::segmentation::spine_class_map()),
            tissue_provider: ProviderConfig::mask_files(
                &mask_root,
                tissue_class_map(STANFORD_MODEL_ID).expect("built-in model"),
            ),
            tissue_model_id: STANFORD_MODEL_ID.to_string(),
            workers: 1,
            save_images: true,
            series_threshold: DEFAULT_SERIES_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if !self.input_path.exists() {
            return bad(format!("input path {} does not exist", self.input_path.display()));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.tissue_model_id.is_empty() {
            return bad("empty tissue model id".into());
        }
        self.roi_spec.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.post.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        if self.mode == Mode::Process3d {
            self.spine_provider.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        }
        self.tissue_provider.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn resolved_output_root(&self) -> PathBuf {
        if let Some(root) = &self.output_root {
            return root.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(DEFAULT_OUTPUT_ROOT),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Failed,
    Skipped,
}

/// Outcome for one series (3D) or one DICOM file (2D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub input: PathBuf,
    pub status: RecordStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Emitted files, relative to the run directory.
    #[serde(default)]
    pub files: Vec<String>,
}

impl SeriesRecord {
    fn skipped(input: &Path, reason: String) -> Self {
        SeriesRecord { input: input.to_path_buf(), status: RecordStatus::Skipped, reason: Some(reason), warnings: vec![], files: vec![] }
    }

    fn failed(input: &Path, error: &PipelineError, files: Vec<String>) -> Self {
        log::error!("{}: {error}", input.display());
        SeriesRecord {
            input: input.to_path_buf(),
            status: RecordStatus::Failed,
            reason: Some(error.to_string()),
            warnings: vec![],
            files,
        }
    }
}

/// Records of one run. The run directory name is not serialized, so two runs
/// on the same inputs write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: Mode,
    #[serde(skip)]
    pub run_name: String,
    #[serde(skip)]
    pub run_dir: PathBuf,
    pub records: Vec<SeriesRecord>,
}

impl RunManifest {
    pub fn count(&self, status: RecordStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    /// 0 when at least one record succeeded and none failed, else 1.
    pub fn exit_code(&self) -> i32 {
        if self.count(RecordStatus::Failed) == 0 && self.count(RecordStatus::Ok) > 0 {
            0
        } else {
            1
        }
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.run_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Run directory name for a timestamp.
pub fn run_dir_name(t: chrono::NaiveDateTime) -> String {
    t.format("%Y-%m-%d_%H-%M-%S").to_string()
}

/// Atomically creates `<root>/<timestamp>`, appending `-2`, `-3`, ... when taken.
pub fn create_run_dir(root: &Path, t: chrono::NaiveDateTime) -> Result<(String, PathBuf)> {
    let wrap = |source| PipelineError::OutputRoot { path: root.to_path_buf(), source };
    std::fs::create_dir_all(root).map_err(wrap)?;
    let base = run_dir_name(t);
    for n in 1usize.. {
        let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(&name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok((name, dir)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(wrap(e)),
        }
    }
    unreachable!()
}

/// Makes names unique in order: repeats get `-2`, `-3`, ...
pub fn unique_names<S: AsRef<str>>(names: &[S]) -> Vec<String> {
    let mut used = HashSet::new();
    names
        .iter()
        .map(|n| {
            let n = n.as_ref();
            let mut candidate = n.to_string();
            let mut k = 2;
            while !used.insert(candidate.clone()) {
                candidate = format!("{n}-{k}");
                k += 1;
            }
            candidate
        })
        .collect()
}

/// Final path component, resolving `.` and `..` through the filesystem.
pub(crate) fn dir_name(path: &Path) -> String {
    let resolved = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
    resolved
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".to_string())
}

pub(crate) fn create_output_tree(dir: &Path) -> Result<()> {
    for sub in OUTPUT_SUBDIRS {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    Ok(())
}

/// Path relative to the run directory, with `/` separators.
pub(crate) fn relative(run_dir: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(run_dir).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(format!("cannot start {workers} workers: {e}")))
}

/// Runs the pipeline selected by `cfg.mode` and saves the manifest.
pub fn run(cfg: &RunConfig) -> Result<RunManifest> {
    let manifest = match cfg.mode {
        Mode::Process3d => run_pipeline_3d(cfg)?,
        Mode::Process2d => run_pipeline_2d(cfg)?,
    };
    Ok(manifest)
}
