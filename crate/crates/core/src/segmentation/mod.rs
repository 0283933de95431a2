//! Segmentation providers. The pipelines request masks through [`segment`]
//! and never depend on where the labels come from.

mod manifest;
mod mask_files;
mod onnx;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ndarray::Axis;
use thiserror::Error;

use crate::anatomy::{TissueClass, VertebralLevel};
use crate::tissue::RawTissueMasks;
use crate::volume::{CtVolume, SegmentationMask, VolumeError};

pub use manifest::{ModelManifest, ModelTarget};
pub use mask_files::{spine_mask_path, tissue_mask_path};
pub use onnx::{argmax_channels, normalize_hu, resize_linear, resize_nearest};

#[derive(Debug, Error)]
pub enum SegError {
    #[error("no mask file at {0}")]
    MaskNotFound(PathBuf),
    #[error("mask shape {mask:?} does not match volume shape {volume:?}")]
    ShapeMismatch { mask: [usize; 3], volume: [usize; 3] },
    #[error("model runtime unavailable: {0}")]
    RuntimeUnavailable(String),
    #[error("label {0} is not covered by the class map")]
    UnknownLabel(u16),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid model manifest {path}: {reason}")]
    InvalidManifest { path: PathBuf, reason: String },
    #[error("model inference failed: {0}")]
    Inference(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, SegError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegTarget {
    Spine3d,
    Tissue2d,
}

/// Model identifiers used as defaults.
pub const SPINE_MODEL_ID: &str = "totalsegmentator_spine";
pub const STANFORD_MODEL_ID: &str = "stanford_v0.0.1";
pub const ABCT_MODEL_ID: &str = "abct_v0.0.1";

#[derive(Debug, Clone)]
pub struct SegmentationRequest<'a> {
    pub target: SegTarget,
    /// Full series for spine requests, one axial slice (`nz == 1`) for tissue.
    pub volume: &'a CtVolume,
    pub model_id: String,
    /// Series directory (spine) or DICOM file (tissue) the volume was read from.
    /// Falls back to the volume's source paths.
    pub source: Option<PathBuf>,
}

impl SegmentationRequest<'_> {
    fn validate(&self) -> Result<()> {
        let nz = self.volume.shape()[2];
        match self.target {
            SegTarget::Spine3d if nz < 2 => Err(SegError::InvalidRequest(format!(
                "spine segmentation needs at least 2 slices, got {nz}"
            ))),
            SegTarget::Tissue2d if nz != 1 => Err(SegError::InvalidRequest(format!(
                "tissue segmentation takes one axial slice, got {nz}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    MaskFiles,
    OnnxRuntime,
}

impl ProviderKind {
    pub fn name(self) -> &'static str {
        match self {
            ProviderKind::MaskFiles => "mask_files",
            ProviderKind::OnnxRuntime => "onnx",
        }
    }
}

/// Provider selection. `mask_root` is set only for mask files, `model_path`
/// only for the model runtime.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub mask_root: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    /// Label value in the provider's output to semantic name.
    pub class_map: BTreeMap<u16, String>,
}

impl ProviderConfig {
    pub fn mask_files(mask_root: impl Into<PathBuf>, class_map: BTreeMap<u16, String>) -> Self {
        ProviderConfig {
            kind: ProviderKind::MaskFiles,
            mask_root: Some(mask_root.into()),
            model_path: None,
            class_map,
        }
    }

    /// Model runtime configuration; the class map is read from the model manifest.
    pub fn onnx(model_path: impl Into<PathBuf>) -> Self {
        ProviderConfig {
            kind: ProviderKind::OnnxRuntime,
            mask_root: None,
            model_path: Some(model_path.into()),
            class_map: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.mask_root, &self.model_path) {
            (ProviderKind::MaskFiles, Some(_), None) => {}
            (ProviderKind::OnnxRuntime, None, Some(_)) => {}
            (kind, _, _) => {
                return Err(SegError::InvalidConfig(format!(
                    "{} provider needs exactly its own path field",
                    kind.name()
                )))
            }
        }
        let names: BTreeSet<&String> = self.class_map.values().collect();
        if names.len() != self.class_map.len() {
            return Err(SegError::InvalidConfig("class map assigns one name to several labels".into()));
        }
        if self.class_map.contains_key(&0) {
            return Err(SegError::InvalidConfig("label 0 is background and cannot be mapped".into()));
        }
        Ok(())
    }
}

/// TotalSegmentator vertebra labels for T12 to L5.
pub fn spine_class_map() -> BTreeMap<u16, String> {
    [
        (18, VertebralLevel::L5),
        (19, VertebralLevel::L4),
        (20, VertebralLevel::L3),
        (21, VertebralLevel::L2),
        (22, VertebralLevel::L1),
        (23, VertebralLevel::T12),
    ]
    .into_iter()
    .map(|(id, l)| (id, l.name().to_string()))
    .collect()
}

/// Output labels of the bundled muscle and adipose models. The stanford model
/// emits a bone class that is ignored downstream; the abct model emits IMAT.
pub fn tissue_class_map(model_id: &str) -> Option<BTreeMap<u16, String>> {
    let names: &[(u16, &str)] = match model_id.to_ascii_lowercase().as_str() {
        STANFORD_MODEL_ID => &[(1, "muscle"), (2, "bone"), (3, "vat"), (4, "sat")],
        ABCT_MODEL_ID => &[(1, "muscle"), (2, "imat"), (3, "vat"), (4, "sat")],
        _ => return None,
    };
    Some(names.iter().map(|&(id, n)| (id, n.to_string())).collect())
}

/// Source of segmentation masks. Implementations must tolerate concurrent calls.
pub trait SegmentationProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;
    fn segment(&self, req: &SegmentationRequest<'_>) -> Result<SegmentationMask>;
}

/// Builds the provider described by `cfg`.
pub fn provider(cfg: &ProviderConfig) -> Result<Box<dyn SegmentationProvider>> {
    cfg.validate()?;
    match cfg.kind {
        ProviderKind::MaskFiles => Ok(Box::new(mask_files::MaskFilesProvider::new(cfg.clone()))),
        ProviderKind::OnnxRuntime => Ok(Box::new(onnx::OnnxProvider::load(cfg)?)),
    }
}

/// One-shot segmentation through a freshly built provider.
pub fn segment(req: &SegmentationRequest<'_>, cfg: &ProviderConfig) -> Result<SegmentationMask> {
    provider(cfg)?.segment(req)
}

/// Readiness of one provider kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderStatus {
    pub kind: ProviderKind,
    pub ready: bool,
    pub reason: Option<String>,
}

/// Mask files are always ready; the model runtime is ready when it was compiled
/// in and `model_path` loads.
pub fn available_providers(model_path: Option<&std::path::Path>) -> Vec<ProviderStatus> {
    let onnx = match onnx::probe(model_path) {
        Ok(()) => ProviderStatus {
            kind: ProviderKind::OnnxRuntime,
            ready: true,
            reason: None,
        },
        Err(e) => ProviderStatus {
            kind: ProviderKind::OnnxRuntime,
            ready: false,
            reason: Some(e.to_string()),
        },
    };
    vec![
        ProviderStatus {
            kind: ProviderKind::MaskFiles,
            ready: true,
            reason: None,
        },
        onnx,
    ]
}

/// Checks that every label present in `mask` has a class-map entry.
pub(crate) fn check_labels(mask: &SegmentationMask) -> Result<()> {
    mask.check_label_map().map_err(SegError::UnknownLabel)
}

pub(crate) fn check_shape(mask: &SegmentationMask, volume: &CtVolume) -> Result<()> {
    if mask.shape() != volume.shape() {
        return Err(SegError::ShapeMismatch {
            mask: mask.shape(),
            volume: volume.shape(),
        });
    }
    Ok(())
}

/// Splits a single-slice tissue mask into per-class binary masks `[x, y]`.
/// `imat` is filled only when the class map names it.
pub fn raw_tissue_masks(mask: &SegmentationMask) -> Result<RawTissueMasks> {
    if mask.shape()[2] != 1 {
        return Err(SegError::InvalidRequest(format!(
            "tissue mask must hold one slice, got {}",
            mask.shape()[2]
        )));
    }
    for needed in [TissueClass::Muscle, TissueClass::Vat, TissueClass::Sat] {
        if mask.ids_for(needed.name()).is_empty() {
            return Err(SegError::InvalidConfig(format!("class map lacks {needed}")));
        }
    }
    let plane = |name: &str| mask.binary(name).index_axis_move(Axis(2), 0);
    let imat = (!mask.ids_for(TissueClass::Imat.name()).is_empty()).then(|| plane(TissueClass::Imat.name()));
    Ok(RawTissueMasks {
        muscle: plane(TissueClass::Muscle.name()),
        vat: plane(TissueClass::Vat.name()),
        sat: plane(TissueClass::Sat.name()),
        imat,
    })
}
