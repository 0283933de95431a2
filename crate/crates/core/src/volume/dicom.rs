use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use dicom_core::Tag;
use dicom_dictionary_std::{tags, uids};
use dicom_object::meta::FileMetaTableBuilder;
use dicom_object::{open_file, DefaultDicomObject, InMemDicomObject};
use dicom_pixeldata::{ConvertOptions, ModalityLutOption, PixelDecoder};
use dicom_transfer_syntax_registry::TransferSyntaxRegistry;
use dicom_encoding::TransferSyntaxIndex;
use log::{debug, warn};
use ndarray::Array3;

use super::{CtVolume, Result, VolumeError};

/// Maximum allowed relative deviation of any inter-slice gap from the median gap.
pub const SLICE_GAP_TOLERANCE: f64 = 0.10;

const ORIENTATION_TOLERANCE: f64 = 1e-3;

/// Returns true for files carrying the `DICM` magic at offset 128, or, failing
/// that, files that parse as a bare implicit-VR little-endian dataset.
pub fn is_dicom_file(path: &Path) -> bool {
    match has_dicm_magic(path) {
        Ok(true) => true,
        Ok(false) => read_bare_dataset(path).is_ok(),
        Err(_) => false,
    }
}

fn has_dicm_magic(path: &Path) -> std::io::Result<bool> {
    let mut head = [0u8; 132];
    let mut f = File::open(path)?;
    let mut read = 0;
    while read < head.len() {
        let n = f.read(&mut head[read..])?;
        if n == 0 {
            return Ok(false);
        }
        read += n;
    }
    Ok(&head[128..132] == b"DICM")
}

/// Bare datasets (no preamble, no meta group) are accepted when they parse as
/// implicit VR little endian and carry pixel data or a SOP class.
fn read_bare_dataset(path: &Path) -> std::result::Result<DefaultDicomObject, String> {
    let reader = BufReader::new(File::open(path).map_err(|e| e.to_string())?);
    let ts = TransferSyntaxRegistry
        .get(uids::IMPLICIT_VR_LITTLE_ENDIAN)
        .ok_or("implicit VR little endian not registered")?;
    let obj = InMemDicomObject::read_dataset_with_ts(reader, ts).map_err(|e| e.to_string())?;
    if obj.get(tags::PIXEL_DATA).is_none() && obj.get(tags::SOP_CLASS_UID).is_none() {
        return Err("no pixel data or SOP class in bare dataset".into());
    }
    let meta = FileMetaTableBuilder::new()
        .transfer_syntax(uids::IMPLICIT_VR_LITTLE_ENDIAN)
        .media_storage_sop_class_uid(uids::CT_IMAGE_STORAGE)
        .media_storage_sop_instance_uid("2.25.0");
    obj.with_meta(meta).map_err(|e| e.to_string())
}

fn read_object(path: &Path) -> Result<DefaultDicomObject> {
    let unparseable = |reason: String| VolumeError::UnparseableFile {
        path: path.to_path_buf(),
        reason,
    };
    match has_dicm_magic(path) {
        Ok(true) => open_file(path).map_err(|e| unparseable(e.to_string())),
        Ok(false) => read_bare_dataset(path).map_err(unparseable),
        Err(e) => Err(unparseable(e.to_string())),
    }
}

/// Header fields and stored pixel values of one axial slice.
#[derive(Debug)]
struct Slice {
    path: PathBuf,
    rows: usize,
    cols: usize,
    /// (row spacing, column spacing) in mm, as stored.
    pixel_spacing: [f64; 2],
    position: Option<[f64; 3]>,
    orientation: Option<[f64; 6]>,
    instance: Option<i64>,
    thickness: Option<f64>,
    gap_hint: Option<f64>,
    /// HU values in row-major order (row index = y, column index = x).
    hu: Vec<f64>,
}

fn float_values(obj: &DefaultDicomObject, tag: Tag) -> Option<Vec<f64>> {
    obj.get(tag).and_then(|e| e.to_multi_float64().ok())
}

fn float_value(obj: &DefaultDicomObject, tag: Tag) -> Option<f64> {
    obj.get(tag).and_then(|e| e.to_float64().ok())
}

fn read_slice(path: &Path) -> Result<Slice> {
    let obj = read_object(path)?;
    let unparseable = |reason: String| VolumeError::UnparseableFile {
        path: path.to_path_buf(),
        reason,
    };

    let rows = obj
        .get(tags::ROWS)
        .and_then(|e| e.to_int::<u32>().ok())
        .ok_or_else(|| unparseable("missing Rows".into()))? as usize;
    let cols = obj
        .get(tags::COLUMNS)
        .and_then(|e| e.to_int::<u32>().ok())
        .ok_or_else(|| unparseable("missing Columns".into()))? as usize;
    if obj.get(tags::PIXEL_DATA).is_none() {
        return Err(unparseable("no PixelData".into()));
    }
    let frames = obj
        .get(tags::NUMBER_OF_FRAMES)
        .and_then(|e| e.to_int::<u32>().ok())
        .unwrap_or(1);
    if frames != 1 {
        return Err(unparseable(format!("multi-frame images ({frames} frames) are not supported")));
    }

    let pixel_spacing = match float_values(&obj, tags::PIXEL_SPACING) {
        Some(v) if v.len() >= 2 && v[0] > 0.0 && v[1] > 0.0 => [v[0], v[1]],
        _ => {
            return Err(VolumeError::MissingPixelSpacing {
                path: path.to_path_buf(),
            })
        }
    };
    let position = float_values(&obj, tags::IMAGE_POSITION_PATIENT)
        .filter(|v| v.len() >= 3)
        .map(|v| [v[0], v[1], v[2]]);
    let orientation = float_values(&obj, tags::IMAGE_ORIENTATION_PATIENT)
        .filter(|v| v.len() >= 6)
        .map(|v| [v[0], v[1], v[2], v[3], v[4], v[5]]);
    let instance = obj
        .get(tags::INSTANCE_NUMBER)
        .and_then(|e| e.to_int::<i64>().ok());

    let slope = float_value(&obj, tags::RESCALE_SLOPE);
    let intercept = float_value(&obj, tags::RESCALE_INTERCEPT);
    if slope.is_none() || intercept.is_none() {
        warn!(
            "{}: RescaleSlope/RescaleIntercept missing, assuming 1/0",
            path.display()
        );
    }
    let slope = slope.unwrap_or(1.0);
    let intercept = intercept.unwrap_or(0.0);

    let decoded = obj
        .decode_pixel_data()
        .map_err(|e| unparseable(format!("pixel data: {e}")))?;
    if decoded.samples_per_pixel() != 1 {
        return Err(unparseable(format!(
            "expected one sample per pixel, got {}",
            decoded.samples_per_pixel()
        )));
    }
    let raw: Vec<f64> = decoded
        .to_vec_with_options(&ConvertOptions::new().with_modality_lut(ModalityLutOption::None))
        .map_err(|e| unparseable(format!("pixel data: {e}")))?;
    if raw.len() != rows * cols {
        return Err(unparseable(format!(
            "pixel data holds {} samples, expected {}x{}",
            raw.len(),
            rows,
            cols
        )));
    }
    let hu = raw.into_iter().map(|v| slope * v + intercept).collect();

    Ok(Slice {
        path: path.to_path_buf(),
        rows,
        cols,
        pixel_spacing,
        position,
        orientation,
        instance,
        thickness: float_value(&obj, tags::SLICE_THICKNESS).filter(|t| *t > 0.0),
        gap_hint: float_value(&obj, tags::SPACING_BETWEEN_SLICES).filter(|t| *t > 0.0),
        hu,
    })
}

/// Axis flips needed to bring an axial slice into the canonical frame.
fn axis_flips(orientation: Option<[f64; 6]>, path: &Path) -> Result<(bool, bool)> {
    let Some(o) = orientation else {
        return Ok((false, false));
    };
    let (row, col) = ([o[0], o[1], o[2]], [o[3], o[4], o[5]]);
    let near = |v: [f64; 3], axis: usize| -> Option<bool> {
        let aligned = v
            .iter()
            .enumerate()
            .all(|(i, c)| if i == axis { (c.abs() - 1.0).abs() < 1e-2 } else { c.abs() < 1e-2 });
        aligned.then_some(v[axis] < 0.0)
    };
    match (near(row, 0), near(col, 1)) {
        (Some(fx), Some(fy)) => Ok((fx, fy)),
        _ => Err(VolumeError::OrientationUnresolvable(format!(
            "{}: only axial acquisitions are supported, ImageOrientationPatient = {:?}",
            path.display(),
            o
        ))),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn assemble(mut slices: Vec<Slice>) -> Result<CtVolume> {
    let first = &slices[0];
    let (rows, cols, ps) = (first.rows, first.cols, first.pixel_spacing);
    for s in &slices[1..] {
        if s.rows != rows || s.cols != cols {
            return Err(VolumeError::InconsistentSliceGeometry(format!(
                "{} is {}x{}, expected {}x{}",
                s.path.display(),
                s.rows,
                s.cols,
                rows,
                cols
            )));
        }
        if (s.pixel_spacing[0] - ps[0]).abs() > 1e-4 || (s.pixel_spacing[1] - ps[1]).abs() > 1e-4 {
            return Err(VolumeError::InconsistentSliceGeometry(format!(
                "{} has pixel spacing {:?}, expected {:?}",
                s.path.display(),
                s.pixel_spacing,
                ps
            )));
        }
        let mixed = match (s.orientation, first.orientation) {
            (Some(a), Some(b)) => a.iter().zip(b).any(|(x, y)| (x - y).abs() > ORIENTATION_TOLERANCE),
            (None, None) => false,
            _ => true,
        };
        if mixed {
            return Err(VolumeError::InconsistentSliceGeometry(format!(
                "{} has a different orientation",
                s.path.display()
            )));
        }
    }
    let (flip_x, flip_y) = axis_flips(first.orientation, &first.path)?;

    // Slice order: physical z when every slice has a position, InstanceNumber otherwise.
    let slice_z: Vec<f64> = if slices.iter().all(|s| s.position.is_some()) {
        slices.sort_by(|a, b| a.position.unwrap()[2].total_cmp(&b.position.unwrap()[2]));
        slices.iter().map(|s| s.position.unwrap()[2]).collect()
    } else if slices.iter().all(|s| s.instance.is_some()) {
        slices.sort_by_key(|s| s.instance.unwrap());
        if slices.windows(2).any(|w| w[0].instance == w[1].instance) {
            return Err(VolumeError::InconsistentSliceGeometry(
                "duplicate InstanceNumber".into(),
            ));
        }
        let gap = match slices.len() {
            1 => 1.0,
            _ => first_some(&slices, |s| s.gap_hint.or(s.thickness)).ok_or_else(|| {
                VolumeError::InconsistentSliceGeometry(
                    "no ImagePositionPatient and no slice spacing to order slices".into(),
                )
            })?,
        };
        let z0 = slices[0].position.map(|p| p[2]).unwrap_or(0.0);
        (0..slices.len()).map(|k| z0 + k as f64 * gap).collect()
    } else {
        return Err(VolumeError::InconsistentSliceGeometry(
            "slices lack both ImagePositionPatient and InstanceNumber".into(),
        ));
    };

    let mut gaps: Vec<f64> = slice_z.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.iter().any(|g| *g <= 1e-6) {
        return Err(VolumeError::InconsistentSliceGeometry(
            "two slices share the same z position".into(),
        ));
    }
    let sz = if gaps.is_empty() {
        slices[0].thickness.unwrap_or(1.0)
    } else {
        let med = median(&mut gaps.clone());
        let max_dev = gaps
            .iter_mut()
            .map(|g| (*g - med).abs())
            .fold(0.0, f64::max);
        if max_dev > SLICE_GAP_TOLERANCE * med {
            return Err(VolumeError::NonUniformSliceSpacing {
                median_gap: med,
                max_deviation: max_dev,
            });
        }
        med
    };

    let (sx, sy) = (ps[1], ps[0]);
    let nz = slices.len();
    let mut voxels = Array3::<f64>::zeros((cols, rows, nz));
    for (k, s) in slices.iter().enumerate() {
        for r in 0..rows {
            let y = if flip_y { rows - 1 - r } else { r };
            for c in 0..cols {
                let x = if flip_x { cols - 1 - c } else { c };
                voxels[[x, y, k]] = s.hu[r * cols + c];
            }
        }
    }

    let origin = match slices[0].position {
        Some(p) => [
            if flip_x { p[0] - (cols - 1) as f64 * sx } else { p[0] },
            if flip_y { p[1] - (rows - 1) as f64 * sy } else { p[1] },
            slice_z[0],
        ],
        None => [0.0, 0.0, slice_z[0]],
    };

    let vol = CtVolume {
        voxels,
        spacing: [sx, sy, sz],
        origin,
        slice_z,
        source_paths: slices.into_iter().map(|s| s.path).collect(),
    };
    vol.validate()?;
    Ok(vol)
}

fn first_some<T>(slices: &[Slice], f: impl Fn(&Slice) -> Option<T>) -> Option<T> {
    slices.iter().find_map(f)
}

/// Loads every DICOM file directly inside `dir` as one axial series.
///
/// Files without DICOM content are ignored; files that look like DICOM but fail
/// to parse abort the load.
pub fn load_dicom_series(dir: &Path) -> Result<CtVolume> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let mut slices = Vec::with_capacity(files.len());
    for f in files {
        if !is_dicom_file(&f) {
            debug!("skipping non-DICOM file {}", f.display());
            continue;
        }
        slices.push(read_slice(&f)?);
    }
    if slices.is_empty() {
        return Err(VolumeError::EmptySeries(dir.to_path_buf()));
    }
    assemble(slices)
}

/// Loads a single axial DICOM file as a one-slice volume.
pub fn load_axial_dicom(file: &Path) -> Result<CtVolume> {
    let slice = read_slice(file)?;
    let mut vol = assemble(vec![slice])?;
    vol.spacing[2] = 1.0;
    Ok(vol)
}
