//! Volume ingestion: DICOM series, single axial DICOM slices, NIfTI label masks,
//! and discovery of candidate series on disk.
//!
//! Every loader produces data in one canonical voxel frame, indexed `[x, y, z]`:
//!
//! * `x` increases from the patient's right to left,
//! * `y` increases from anterior to posterior,
//! * `z` increases from inferior to superior.
//!
//! Downstream code relies on this frame and never re-derives orientation.

mod dicom;
mod discover;
mod nifti_io;

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array3, ArrayView2, Axis};
use thiserror::Error;

pub use dicom::{is_dicom_file, load_axial_dicom, load_dicom_series, SLICE_GAP_TOLERANCE};
pub use discover::{discover_series, SeriesCandidate, DEFAULT_SERIES_THRESHOLD};
pub use nifti_io::{load_nifti_mask, save_nifti_mask};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("{path}: missing PixelSpacing")]
    MissingPixelSpacing { path: PathBuf },
    #[error("inconsistent slice geometry: {0}")]
    InconsistentSliceGeometry(String),
    #[error("non-uniform slice spacing: gap deviates {max_deviation:.3} mm from median gap {median_gap:.3} mm")]
    NonUniformSliceSpacing { median_gap: f64, max_deviation: f64 },
    #[error("{path}: unparseable file: {reason}")]
    UnparseableFile { path: PathBuf, reason: String },
    #[error("no DICOM slices found in {0}")]
    EmptySeries(PathBuf),
    #[error("unsupported datatype: {0}")]
    UnsupportedDatatype(String),
    #[error("orientation cannot be resolved: {0}")]
    OrientationUnresolvable(String),
    #[error("root directory not found: {0}")]
    RootNotFound(PathBuf),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = VolumeError> = std::result::Result<T, E>;

/// A CT volume in Hounsfield units, in the canonical `[x, y, z]` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    pub voxels: Array3<f64>,
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
    /// Physical position (mm) of voxel `[0, 0, 0]`.
    pub origin: [f64; 3],
    /// Physical z (mm) of every axial slice; strictly increasing.
    pub slice_z: Vec<f64>,
    /// Slice files in volume order. Empty when the volume did not come from DICOM.
    pub source_paths: Vec<PathBuf>,
}

impl CtVolume {
    /// Builds a volume with uniformly spaced slices starting at `origin`.
    pub fn new(voxels: Array3<f64>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let nz = voxels.len_of(Axis(2));
        let slice_z = (0..nz).map(|k| origin[2] + k as f64 * spacing[2]).collect();
        let vol = CtVolume {
            voxels,
            spacing,
            origin,
            slice_z,
            source_paths: Vec::new(),
        };
        vol.validate()?;
        Ok(vol)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(VolumeError::InvalidVolume(format!(
                "spacing must be finite and positive, got {:?}",
                self.spacing
            )));
        }
        if self.voxels.is_empty() {
            return Err(VolumeError::InvalidVolume("empty voxel array".into()));
        }
        let nz = self.voxels.len_of(Axis(2));
        if self.slice_z.len() != nz {
            return Err(VolumeError::InvalidVolume(format!(
                "{} slice positions for {} slices",
                self.slice_z.len(),
                nz
            )));
        }
        if self.slice_z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(VolumeError::InvalidVolume(
                "slice positions must be strictly increasing".into(),
            ));
        }
        if !self.source_paths.is_empty() && self.source_paths.len() != nz {
            return Err(VolumeError::InvalidVolume(format!(
                "{} source paths for {} slices",
                self.source_paths.len(),
                nz
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.voxels.shape();
        [s[0], s[1], s[2]]
    }

    /// Axial slice `z`, indexed `[x, y]`.
    pub fn axial(&self, z: usize) -> ArrayView2<'_, f64> {
        self.voxels.index_axis(Axis(2), z)
    }

    pub fn contains(&self, idx: [i64; 3]) -> bool {
        let shape = self.shape();
        idx.iter()
            .zip(shape)
            .all(|(&i, n)| i >= 0 && (i as usize) < n)
    }
}

/// Integer label field aligned with a [`CtVolume`] (or with a single axial slice,
/// stored with a z extent of 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    pub labels: Array3<u16>,
    /// Label id to semantic name (`"L3"`, `"muscle"`, ...).
    pub label_map: BTreeMap<u16, String>,
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl SegmentationMask {
    pub fn new(labels: Array3<u16>, label_map: BTreeMap<u16, String>, spacing: [f64; 3]) -> Self {
        SegmentationMask {
            labels,
            label_map,
            spacing,
            origin: [0.0; 3],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.labels.shape();
        [s[0], s[1], s[2]]
    }

    /// Distinct nonzero labels present in the array, ascending.
    pub fn present_labels(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &l in self.labels.iter() {
            seen[l as usize] = true;
        }
        (1..=u16::MAX).filter(|&l| seen[l as usize]).collect()
    }

    /// Label ids whose semantic name matches `name` (case-insensitive).
    pub fn ids_for(&self, name: &str) -> Vec<u16> {
        self.label_map
            .iter()
            .filter(|(_, n)| n.eq_ignore_ascii_case(name))
            .map(|(&id, _)| id)
            .collect()
    }

    /// Boolean field of voxels carrying the semantic label `name`.
    pub fn binary(&self, name: &str) -> Array3<bool> {
        let ids = self.ids_for(name);
        self.labels.mapv(|l| l != 0 && ids.contains(&l))
    }

    /// Checks that every nonzero label present has a semantic name.
    pub fn check_label_map(&self) -> std::result::Result<(), u16> {
        match self
            .present_labels()
            .into_iter()
            .find(|l| !self.label_map.contains_key(l))
        {
            Some(l) => Err(l),
            None => Ok(()),
        }
    }
}
