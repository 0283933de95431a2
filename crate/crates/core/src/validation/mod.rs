//! Synthetic phantoms with exact ground truth, and the evaluation metrics used
//! to score spine ROIs and tissue masks against references.

mod dicom_export;
mod metrics;
mod slice_phantom;
mod spine_phantom;

use std::collections::BTreeMap;

use thiserror::Error;

pub use dicom_export::{export_dicom_series, export_dicom_slice, slice_dataset, slice_file_name, DicomExportOptions};
pub use metrics::{compare_spine, cube_offsets, dice, mean_and_median, LevelValidation, ValidationReport};
pub use slice_phantom::{
    generate_slice_phantom, HoleSpec, PocketSpec, SlicePhantom, SlicePhantomSpec, SliceTruth,
};
pub use spine_phantom::{
    generate_spine_phantom, LevelPhantomSpec, LevelTruth, ProcessSpec, SpinePhantom, SpinePhantomSpec,
    DEFAULT_TRABECULAR_HU,
};

use crate::spine::SpineError;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("phantom spec is infeasible: {0}")]
    SpecInfeasible(String),
    #[error("phantom spec parse error: {0}")]
    Parse(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error(transparent)]
    Spine(#[from] SpineError),
    #[error("DICOM export failed: {0}")]
    Export(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ValidationError>;

/// Parses `key = value` lines; `#` starts a comment. Keys must be unique.
pub(crate) fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ValidationError::Parse(format!("line {}: expected key = value", n + 1)))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ValidationError::Parse(format!("duplicate key {key}")));
        }
    }
    Ok(out)
}

/// Whitespace-separated numbers of a fixed count.
pub(crate) fn parse_numbers<T: std::str::FromStr>(key: &str, value: &str, count: usize) -> Result<Vec<T>> {
    let parsed: Vec<T> = value
        .split_whitespace()
        .map(|t| t.parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| ValidationError::Parse(format!("{key}: cannot parse {value:?}")))?;
    if parsed.len() != count {
        return Err(ValidationError::Parse(format!("{key}: expected {count} values, got {}", parsed.len())));
    }
    Ok(parsed)
}

pub(crate) fn required<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    kv.get(key)
        .map(String::as_str)
        .ok_or_else(|| ValidationError::Parse(format!("missing key {key}")))
}

pub(crate) fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}
