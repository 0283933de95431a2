#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bodycomp::segmentation::{tissue_class_map, STANFORD_MODEL_ID};
use bodycomp::tissue::RawTissueMasks;
use bodycomp::validation::{
    export_dicom_series, export_dicom_slice, generate_slice_phantom, generate_spine_phantom, slice_file_name,
    DicomExportOptions, SlicePhantomSpec, SpinePhantom, SpinePhantomSpec,
};
use bodycomp::volume::save_nifti_mask;
use bodycomp::{CtVolume, SegmentationMask};
use ndarray::{Array2, Array3, Axis};

pub const XY: usize = 128;
pub const NZ: usize = 301;
pub const SPACING: [f64; 3] = [1.0, 1.0, 1.5];

pub struct Corpus {
    pub input: PathBuf,
    pub masks: PathBuf,
    pub series: Vec<PathBuf>,
    pub phantoms: Vec<SpinePhantom>,
    pub raw: RawTissueMasks,
}

/// Tissue labels written for every axial slice: the basic body phantom.
pub fn tissue_raw() -> RawTissueMasks {
    let spec = SlicePhantomSpec::basic([XY, XY], [SPACING[0], SPACING[1]]);
    generate_slice_phantom(&spec, &Default::default()).unwrap().raw
}

pub fn tissue_labels(raw: &RawTissueMasks) -> Array2<u16> {
    Array2::from_shape_fn(raw.muscle.dim(), |p| {
        if raw.muscle[p] {
            1
        } else if raw.vat[p] {
            3
        } else if raw.sat[p] {
            4
        } else {
            0
        }
    })
}

pub fn write_tissue_mask(path: &Path, labels: &Array2<u16>, spacing: [f64; 3]) {
    let map: BTreeMap<u16, String> = tissue_class_map(STANFORD_MODEL_ID).unwrap();
    let mask = SegmentationMask::new(labels.clone().insert_axis(Axis(2)), map, spacing);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    save_nifti_mask(&mask, path).unwrap();
}

/// Straight six-level phantom; `hu_shift` offsets every trabecular value.
pub fn series_phantom(hu_shift: f64) -> SpinePhantom {
    let mut spec = SpinePhantomSpec::straight([XY, XY, NZ], SPACING);
    for l in &mut spec.levels {
        l.trabecular_hu += hu_shift;
    }
    generate_spine_phantom(&spec).unwrap()
}

/// `n` exported series under `<dir>/input/series_<i>` with spine and
/// per-slice tissue masks under `<dir>/masks`. Series `corrupt` gets one
/// truncated DICOM file.
pub fn build_3d_corpus(dir: &Path, n: usize, corrupt: Option<usize>) -> Corpus {
    let input = dir.join("input");
    let masks = dir.join("masks");
    let raw = tissue_raw();
    let labels = tissue_labels(&raw);
    let mut series = Vec::new();
    let mut phantoms = Vec::new();
    for i in 0..n {
        let name = format!("series_{i}");
        let sdir = input.join(&name);
        let phantom = series_phantom(10.0 * i as f64);
        let opts = DicomExportOptions { series_number: i as u32 + 1, rescale_intercept: -1024.0, ..Default::default() };
        export_dicom_series(&phantom.volume, &sdir, &opts).unwrap();
        let mdir = masks.join(&name);
        std::fs::create_dir_all(&mdir).unwrap();
        let mut m = phantom.mask.clone();
        m.spacing = SPACING;
        save_nifti_mask(&m, &mdir.join("spine.nii.gz")).unwrap();
        for k in 0..NZ {
            let stem = slice_file_name(k).trim_end_matches(".dcm").to_string();
            write_tissue_mask(&mdir.join(format!("{stem}_tissue.nii.gz")), &labels, SPACING);
        }
        if corrupt == Some(i) {
            let victim = sdir.join(slice_file_name(NZ / 2));
            let bytes = std::fs::read(&victim).unwrap();
            std::fs::write(&victim, &bytes[..300]).unwrap();
        }
        series.push(sdir);
        phantoms.push(phantom);
    }
    Corpus { input, masks, series, phantoms, raw }
}

/// A single axial slice `<dir>/slices/<stem>.dcm` with its tissue mask.
pub fn build_2d_input(dir: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf) {
    let input = dir.join("slices");
    let masks = dir.join("masks2d");
    std::fs::create_dir_all(&input).unwrap();
    let spec = SlicePhantomSpec::basic([XY, XY], [0.8, 0.8]);
    let phantom = generate_slice_phantom(&spec, &Default::default()).unwrap();
    let vol = CtVolume::new(phantom.hu.clone().insert_axis(Axis(2)), [0.8, 0.8, 3.0], [0.0, 0.0, 10.0]).unwrap();
    let file = input.join(format!("{stem}.dcm"));
    export_dicom_slice(&vol, 0, &file, &DicomExportOptions { rescale_intercept: -1024.0, ..Default::default() })
        .unwrap();
    write_tissue_mask(
        &masks.join("slices").join(format!("{stem}_tissue.nii.gz")),
        &tissue_labels(&phantom.raw),
        [0.8, 0.8, 3.0],
    );
    (input, masks, file)
}

/// Every regular file under `root`, relative, sorted.
pub fn list_files(root: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(root).unwrap().to_path_buf())
        .collect();
    out.sort();
    out
}

/// The only subdirectory of `root`.
pub fn single_run_dir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected one run directory in {}", root.display());
    dirs[0].clone()
}

/// `YYYY-mm-dd_HH-MM-SS`.
pub fn is_run_dir_name(name: &str) -> bool {
    let b = name.as_bytes();
    b.len() == 19
        && b.iter().enumerate().all(|(i, &c)| match i {
            4 | 7 => c == b'-',
            10 => c == b'_',
            13 | 16 => c == b'-',
            _ => c.is_ascii_digit(),
        })
}

pub fn shift_z(labels: &Array3<u16>, dz: usize) -> Array3<u16> {
    let (nx, ny, nz) = labels.dim();
    Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| if z >= dz { labels[[x, y, z - dz]] } else { 0 })
}
