//! Writes phantom volumes as axial CT DICOM files (explicit VR little endian,
//! signed 16-bit pixels) so the file-based pipelines can run on them.

use std::path::{Path, PathBuf};

use dicom_core::{dicom_value, DataElement, PrimitiveValue, VR};
use dicom_dictionary_std::{tags, uids};
use dicom_object::meta::FileMetaTableBuilder;
use dicom_object::InMemDicomObject;

use super::{Result, ValidationError};
use crate::volume::CtVolume;

/// Root under which generated UIDs are built.
const UID_ROOT: &str = "2.25.4242";

#[derive(Debug, Clone, PartialEq)]
pub struct DicomExportOptions {
    /// Stored value = (HU - intercept) / slope, rounded.
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    /// Distinguishes the UIDs of different exported series.
    pub series_number: u32,
    pub patient_id: String,
}

impl Default for DicomExportOptions {
    fn default() -> Self {
        DicomExportOptions {
            rescale_slope: 1.0,
            rescale_intercept: 0.0,
            series_number: 1,
            patient_id: "PHANTOM".into(),
        }
    }
}

fn ds(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 16 {
        s
    } else {
        format!("{v:.9e}")
    }
}

fn put(obj: &mut InMemDicomObject, tag: dicom_core::Tag, vr: VR, value: PrimitiveValue) {
    obj.put(DataElement::new(tag, vr, value));
}

/// Builds the dataset for axial slice `k` of `volume`.
pub fn slice_dataset(volume: &CtVolume, k: usize, opts: &DicomExportOptions) -> Result<InMemDicomObject> {
    let [nx, ny, _] = volume.shape();
    let series_uid = format!("{UID_ROOT}.{}", opts.series_number);
    let sop_uid = format!("{series_uid}.{}", k + 1);
    let mut pixels = Vec::with_capacity(nx * ny * 2);
    for y in 0..ny {
        for x in 0..nx {
            let stored = ((volume.voxels[[x, y, k]] - opts.rescale_intercept) / opts.rescale_slope).round();
            if !(i16::MIN as f64..=i16::MAX as f64).contains(&stored) {
                return Err(ValidationError::SpecInfeasible(format!(
                    "HU {} does not fit a signed 16-bit pixel",
                    volume.voxels[[x, y, k]]
                )));
            }
            pixels.extend_from_slice(&(stored as i16).to_le_bytes());
        }
    }
    let z = volume.slice_z.get(k).copied().unwrap_or(volume.origin[2] + k as f64 * volume.spacing[2]);

    let mut obj = InMemDicomObject::new_empty();
    put(&mut obj, tags::SOP_CLASS_UID, VR::UI, PrimitiveValue::from(uids::CT_IMAGE_STORAGE));
    put(&mut obj, tags::SOP_INSTANCE_UID, VR::UI, PrimitiveValue::from(sop_uid.as_str()));
    put(&mut obj, tags::MODALITY, VR::CS, PrimitiveValue::from("CT"));
    put(&mut obj, tags::PATIENT_ID, VR::LO, PrimitiveValue::from(opts.patient_id.as_str()));
    put(&mut obj, tags::STUDY_INSTANCE_UID, VR::UI, PrimitiveValue::from(format!("{UID_ROOT}.0").as_str()));
    put(&mut obj, tags::SERIES_INSTANCE_UID, VR::UI, PrimitiveValue::from(series_uid.as_str()));
    put(&mut obj, tags::SERIES_NUMBER, VR::IS, PrimitiveValue::from(opts.series_number.to_string()));
    put(&mut obj, tags::INSTANCE_NUMBER, VR::IS, PrimitiveValue::from((k + 1).to_string()));
    put(
        &mut obj,
        tags::IMAGE_POSITION_PATIENT,
        VR::DS,
        dicom_value!(Strs, [ds(volume.origin[0]), ds(volume.origin[1]), ds(z)]),
    );
    put(
        &mut obj,
        tags::IMAGE_ORIENTATION_PATIENT,
        VR::DS,
        dicom_value!(Strs, ["1".to_string(), "0".to_string(), "0".to_string(), "0".to_string(), "1".to_string(), "0".to_string()]),
    );
    put(
        &mut obj,
        tags::PIXEL_SPACING,
        VR::DS,
        dicom_value!(Strs, [ds(volume.spacing[1]), ds(volume.spacing[0])]),
    );
    put(&mut obj, tags::SLICE_THICKNESS, VR::DS, PrimitiveValue::from(ds(volume.spacing[2])));
    put(&mut obj, tags::RESCALE_SLOPE, VR::DS, PrimitiveValue::from(ds(opts.rescale_slope)));
    put(&mut obj, tags::RESCALE_INTERCEPT, VR::DS, PrimitiveValue::from(ds(opts.rescale_intercept)));
    put(&mut obj, tags::SAMPLES_PER_PIXEL, VR::US, PrimitiveValue::from(1u16));
    put(&mut obj, tags::PHOTOMETRIC_INTERPRETATION, VR::CS, PrimitiveValue::from("MONOCHROME2"));
    put(&mut obj, tags::ROWS, VR::US, PrimitiveValue::from(ny as u16));
    put(&mut obj, tags::COLUMNS, VR::US, PrimitiveValue::from(nx as u16));
    put(&mut obj, tags::BITS_ALLOCATED, VR::US, PrimitiveValue::from(16u16));
    put(&mut obj, tags::BITS_STORED, VR::US, PrimitiveValue::from(16u16));
    put(&mut obj, tags::HIGH_BIT, VR::US, PrimitiveValue::from(15u16));
    put(&mut obj, tags::PIXEL_REPRESENTATION, VR::US, PrimitiveValue::from(1u16));
    put(&mut obj, tags::PIXEL_DATA, VR::OW, PrimitiveValue::from(pixels));
    Ok(obj)
}

fn write_dataset(obj: InMemDicomObject, sop_uid: &str, path: &Path) -> Result<()> {
    let meta = FileMetaTableBuilder::new()
        .transfer_syntax(uids::EXPLICIT_VR_LITTLE_ENDIAN)
        .media_storage_sop_class_uid(uids::CT_IMAGE_STORAGE)
        .media_storage_sop_instance_uid(sop_uid);
    let file = obj
        .with_meta(meta)
        .map_err(|e| ValidationError::Export(format!("{}: {e}", path.display())))?;
    file.write_to_file(path)
        .map_err(|e| ValidationError::Export(format!("{}: {e}", path.display())))
}

/// File name of exported slice `k`.
pub fn slice_file_name(k: usize) -> String {
    format!("slice_{:04}.dcm", k + 1)
}

/// Writes every axial slice of `volume` into `dir` (created if needed) and
/// returns the file paths in slice order.
pub fn export_dicom_series(volume: &CtVolume, dir: &Path, opts: &DicomExportOptions) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..volume.shape()[2])
        .map(|k| {
            let path = dir.join(slice_file_name(k));
            export_dicom_slice(volume, k, &path, opts)?;
            Ok(path)
        })
        .collect()
}

/// Writes axial slice `k` of `volume` to `path`.
pub fn export_dicom_slice(volume: &CtVolume, k: usize, path: &Path, opts: &DicomExportOptions) -> Result<()> {
    let obj = slice_dataset(volume, k, opts)?;
    let sop_uid = format!("{UID_ROOT}.{}.{}", opts.series_number, k + 1);
    write_dataset(obj, &sop_uid, path)
}
