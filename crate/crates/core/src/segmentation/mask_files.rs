//! Precomputed NIfTI masks laid out as
//! `<root>/<series_dir_name>/spine.nii.gz` and
//! `<root>/<series_dir_name>/<dicom_stem>_tissue.nii.gz`.

use std::path::{Path, PathBuf};

use super::{check_labels, check_shape, ProviderConfig, ProviderKind, Result, SegError, SegTarget, SegmentationProvider, SegmentationRequest};
use crate::volume::{load_nifti_mask, SegmentationMask};

fn dir_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn spine_mask_path(root: &Path, series_dir: &Path) -> PathBuf {
    root.join(dir_name(series_dir)).join("spine.nii.gz")
}

pub fn tissue_mask_path(root: &Path, dicom_file: &Path) -> PathBuf {
    let series = dicom_file.parent().map(dir_name).unwrap_or_default();
    let stem = dicom_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    root.join(series).join(format!("{stem}_tissue.nii.gz"))
}

pub(super) struct MaskFilesProvider {
    cfg: ProviderConfig,
}

impl MaskFilesProvider {
    pub(super) fn new(cfg: ProviderConfig) -> Self {
        MaskFilesProvider { cfg }
    }

    fn locate(&self, req: &SegmentationRequest<'_>) -> Result<PathBuf> {
        let root = self.cfg.mask_root.as_deref().expect("validated config");
        let first = req.volume.source_paths.first();
        match req.target {
            SegTarget::Spine3d => {
                let dir = req
                    .source
                    .clone()
                    .or_else(|| first.and_then(|p| p.parent().map(Path::to_path_buf)))
                    .ok_or_else(|| SegError::InvalidRequest("spine request without a source series".into()))?;
                Ok(spine_mask_path(root, &dir))
            }
            SegTarget::Tissue2d => {
                let file = req
                    .source
                    .clone()
                    .or_else(|| first.cloned())
                    .ok_or_else(|| SegError::InvalidRequest("tissue request without a source file".into()))?;
                Ok(tissue_mask_path(root, &file))
            }
        }
    }
}

impl SegmentationProvider for MaskFilesProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::MaskFiles
    }

    fn segment(&self, req: &SegmentationRequest<'_>) -> Result<SegmentationMask> {
        req.validate()?;
        let path = self.locate(req)?;
        if !path.is_file() {
            return Err(SegError::MaskNotFound(path));
        }
        let mut mask = load_nifti_mask(&path, &self.cfg.class_map)?;
        check_shape(&mask, req.volume)?;
        check_labels(&mask)?;
        mask.spacing = req.volume.spacing;
        mask.origin = req.volume.origin;
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{segment, spine_class_map, tissue_class_map};
    use crate::volume::{save_nifti_mask, CtVolume};
    use ndarray::Array3;
    use std::collections::BTreeMap;

    #[test]
    fn lookup_paths() {
        let root = Path::new("/masks");
        assert_eq!(
            spine_mask_path(root, Path::new("/data/series_a")),
            Path::new("/masks/series_a/spine.nii.gz")
        );
        assert_eq!(
            tissue_mask_path(root, Path::new("/data/series_a/abcd.dcm")),
            Path::new("/masks/series_a/abcd_tissue.nii.gz")
        );
    }

    fn write_mask(root: &Path, series: &str, labels: Array3<u16>) {
        std::fs::create_dir_all(root.join(series)).unwrap();
        let m = SegmentationMask::new(labels, BTreeMap::new(), [1.0; 3]);
        save_nifti_mask(&m, &root.join(series).join("spine.nii.gz")).unwrap();
    }

    #[test]
    fn spine_masks_pass_through() {
        let tmp = tempfile::tempdir().unwrap();
        let labels = Array3::from_shape_fn((6, 5, 4), |(x, _, z)| if x > 2 { 18 + z as u16 } else { 0 });
        write_mask(tmp.path(), "s1", labels.clone());
        let vol = CtVolume::new(Array3::zeros((6, 5, 4)), [1.0; 3], [0.0; 3]).unwrap();
        let cfg = ProviderConfig::mask_files(tmp.path(), spine_class_map());
        let req = SegmentationRequest {
            target: SegTarget::Spine3d,
            volume: &vol,
            model_id: "totalsegmentator_spine".into(),
            source: Some("/anywhere/s1".into()),
        };
        let mask = segment(&req, &cfg).unwrap();
        assert_eq!(mask.labels, labels);
        assert_eq!(mask.label_map[&20], "L3");
    }

    #[test]
    fn missing_shape_and_label_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let vol = CtVolume::new(Array3::zeros((6, 5, 4)), [1.0; 3], [0.0; 3]).unwrap();
        let cfg = ProviderConfig::mask_files(tmp.path(), spine_class_map());
        let req = |src: &str| SegmentationRequest {
            target: SegTarget::Spine3d,
            volume: &vol,
            model_id: String::new(),
            source: Some(src.into()),
        };
        assert!(matches!(segment(&req("/x/none"), &cfg), Err(SegError::MaskNotFound(_))));

        write_mask(tmp.path(), "small", Array3::zeros((6, 5, 3)));
        assert!(matches!(segment(&req("/x/small"), &cfg), Err(SegError::ShapeMismatch { .. })));

        write_mask(tmp.path(), "odd", Array3::from_elem((6, 5, 4), 7));
        assert!(matches!(segment(&req("/x/odd"), &cfg), Err(SegError::UnknownLabel(7))));
    }

    #[test]
    fn class_map_relabels_tissue() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("s")).unwrap();
        let labels = Array3::from_shape_fn((4, 4, 1), |(x, _, _)| (x as u16 % 5) + 1);
        let m = SegmentationMask::new(labels.clone(), BTreeMap::new(), [1.0; 3]);
        save_nifti_mask(&m, &tmp.path().join("s").join("abcd_tissue.nii.gz")).unwrap();
        let vol = CtVolume::new(Array3::zeros((4, 4, 1)), [1.0; 3], [0.0; 3]).unwrap();
        let cfg = ProviderConfig::mask_files(tmp.path(), tissue_class_map("stanford_v0.0.1").unwrap());
        let req = SegmentationRequest {
            target: SegTarget::Tissue2d,
            volume: &vol,
            model_id: "stanford_v0.0.1".into(),
            source: Some("/in/s/abcd.dcm".into()),
        };
        let mask = segment(&req, &cfg).unwrap();
        let vat = mask.binary("vat");
        for ((x, y, z), &l) in labels.indexed_iter() {
            assert_eq!(vat[[x, y, z]], l == 3);
        }
    }
}
