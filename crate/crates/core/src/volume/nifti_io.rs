use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array3, Axis, Ix3};
use nifti::writer::WriterOptions;
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, NiftiType, ReaderOptions};

use super::{Result, SegmentationMask, VolumeError};

fn nifti_err(path: &Path, e: impl std::fmt::Display) -> VolumeError {
    VolumeError::UnparseableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Voxel-to-world (RAS) 3x4 affine from the header, preferring sform over qform.
fn affine(h: &NiftiHeader) -> Option<[[f64; 4]; 3]> {
    if h.sform_code > 0 {
        let row = |r: [f32; 4]| r.map(f64::from);
        return Some([row(h.srow_x), row(h.srow_y), row(h.srow_z)]);
    }
    if h.qform_code > 0 {
        let (b, c, d) = (h.quatern_b as f64, h.quatern_c as f64, h.quatern_d as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let qfac = if h.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let p = [h.pixdim[1] as f64, h.pixdim[2] as f64, h.pixdim[3] as f64 * qfac];
        let off = [h.quatern_x as f64, h.quatern_y as f64, h.quatern_z as f64];
        let mut m = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j] * p[j];
            }
            m[i][3] = off[i];
        }
        return Some(m);
    }
    None
}

/// For each voxel axis: (canonical axis, needs flip, spacing).
fn axis_assignment(m: &[[f64; 4]; 3]) -> std::result::Result<[(usize, bool, f64); 3], String> {
    let mut out = [(0usize, false, 0.0f64); 3];
    let mut used = [false; 3];
    for (j, slot) in out.iter_mut().enumerate() {
        let col = [m[0][j], m[1][j], m[2][j]];
        let norm = col.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(format!("voxel axis {j} has a degenerate direction"));
        }
        let (world, comp) = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, c)| (i, *c))
            .unwrap();
        if comp.abs() / norm < 0.8 || used[world] {
            return Err(format!("voxel axis {j} is not aligned with a unique anatomical axis"));
        }
        used[world] = true;
        // RAS world; canonical x runs toward patient left (-R), y toward posterior (-A),
        // z toward superior (+S).
        let flip = match world {
            0 | 1 => comp > 0.0,
            _ => comp < 0.0,
        };
        *slot = (world, flip, norm);
    }
    Ok(out)
}

/// Loads an integer-valued NIfTI-1 label volume and reorients it into the
/// canonical frame. 2D files are treated as a single axial slice.
pub fn load_nifti_mask(file: &Path, label_map: &BTreeMap<u16, String>) -> Result<SegmentationMask> {
    let obj = ReaderOptions::new()
        .read_file(file)
        .map_err(|e| nifti_err(file, e))?;
    let header = obj.header().clone();
    match header.data_type() {
        Ok(
            NiftiType::Uint8
            | NiftiType::Int8
            | NiftiType::Int16
            | NiftiType::Uint16
            | NiftiType::Int32
            | NiftiType::Uint32
            | NiftiType::Int64
            | NiftiType::Uint64
            | NiftiType::Float32
            | NiftiType::Float64,
        ) => {}
        Ok(other) => {
            return Err(VolumeError::UnsupportedDatatype(format!(
                "{}: {:?}",
                file.display(),
                other
            )))
        }
        Err(e) => return Err(VolumeError::UnsupportedDatatype(e.to_string())),
    }

    let data = obj
        .into_volume()
        .into_ndarray::<f64>()
        .map_err(|e| nifti_err(file, e))?;
    let shape = data.shape().to_vec();
    let data = match shape.len() {
        2 => data.into_shape_with_order((shape[0], shape[1], 1)).map_err(|e| nifti_err(file, e))?,
        3 => data.into_dimensionality::<Ix3>().map_err(|e| nifti_err(file, e))?,
        4 if shape[3] == 1 => data
            .into_shape_with_order((shape[0], shape[1], shape[2]))
            .map_err(|e| nifti_err(file, e))?,
        n => {
            return Err(VolumeError::UnsupportedDatatype(format!(
                "{}: expected a 2D or 3D label image, got {n} dimensions",
                file.display()
            )))
        }
    };

    let mut bad = None;
    let labels = data.mapv(|v| {
        if v.fract() != 0.0 || !(0.0..=u16::MAX as f64).contains(&v) {
            bad.get_or_insert(v);
            0
        } else {
            v as u16
        }
    });
    if let Some(v) = bad {
        return Err(VolumeError::UnsupportedDatatype(format!(
            "{}: value {v} is not a non-negative integer label",
            file.display()
        )));
    }

    let m = affine(&header).ok_or_else(|| {
        VolumeError::OrientationUnresolvable(format!(
            "{}: neither sform nor qform is set",
            file.display()
        ))
    })?;
    let assignment = axis_assignment(&m)
        .map_err(|e| VolumeError::OrientationUnresolvable(format!("{}: {e}", file.display())))?;

    // Reorient: flip, then permute voxel axes into canonical order.
    let mut labels = labels;
    for (j, &(_, flip, _)) in assignment.iter().enumerate() {
        if flip {
            labels.invert_axis(Axis(j));
        }
    }
    let mut perm = [0usize; 3];
    let mut spacing = [0.0; 3];
    for (j, &(world, _, s)) in assignment.iter().enumerate() {
        perm[world] = j;
        spacing[world] = s;
    }
    let labels = labels.permuted_axes(perm).as_standard_layout().into_owned();

    // Canonical origin in LPS: position of the voxel that became [0,0,0].
    let shape_in = [shape[0], shape[1], shape.get(2).copied().unwrap_or(1)];
    let mut corner = [0.0f64; 3];
    for (j, &(_, flip, _)) in assignment.iter().enumerate() {
        if flip {
            corner[j] = (shape_in[j] - 1) as f64;
        }
    }
    let ras: Vec<f64> = (0..3)
        .map(|i| m[i][0] * corner[0] + m[i][1] * corner[1] + m[i][2] * corner[2] + m[i][3])
        .collect();

    Ok(SegmentationMask {
        labels,
        label_map: label_map.clone(),
        spacing,
        origin: [-ras[0], -ras[1], ras[2]],
    })
}

/// Writes a label mask as NIfTI-1 (gzip-compressed when the path ends in `.gz`),
/// with an affine that maps the canonical frame back to RAS world coordinates.
pub fn save_nifti_mask(mask: &SegmentationMask, file: &Path) -> Result<()> {
    let [sx, sy, sz] = mask.spacing;
    let [ox, oy, oz] = mask.origin;
    let mut header = NiftiHeader {
        pixdim: [1.0, sx as f32, sy as f32, sz as f32, 1.0, 1.0, 1.0, 1.0],
        xyzt_units: 2, // millimetres
        qform_code: 1,
        sform_code: 1,
        // 180 degree rotation about z: (x, y, z) -> (-x, -y, z).
        quatern_b: 0.0,
        quatern_c: 0.0,
        quatern_d: 1.0,
        quatern_x: -ox as f32,
        quatern_y: -oy as f32,
        quatern_z: oz as f32,
        srow_x: [-sx as f32, 0.0, 0.0, -ox as f32],
        srow_y: [0.0, -sy as f32, 0.0, -oy as f32],
        srow_z: [0.0, 0.0, sz as f32, oz as f32],
        ..NiftiHeader::default()
    };
    header.descrip = b"label mask".to_vec();

    let compress = file
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    let writer = WriterOptions::new(file)
        .reference_header(&header)
        .compress(compress);
    let max = mask.labels.iter().copied().max().unwrap_or(0);
    let result = if max <= u8::MAX as u16 {
        let bytes: Array3<u8> = mask.labels.mapv(|l| l as u8);
        writer.write_nifti(&bytes)
    } else {
        writer.write_nifti(&mask.labels)
    };
    result.map_err(|e| match e {
        nifti::NiftiError::Io(io) => VolumeError::Io(io),
        other => nifti_err(file, other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spine_map() -> BTreeMap<u16, String> {
        BTreeMap::from([(1, "L1".to_string()), (300, "L2".to_string())])
    }

    #[test]
    fn round_trip_preserves_labels_and_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = Array3::<u16>::zeros((5, 4, 3));
        labels[[1, 2, 0]] = 1;
        labels[[4, 3, 2]] = 300;
        let mut mask = SegmentationMask::new(labels, spine_map(), [0.7, 0.8, 2.5]);
        mask.origin = [-120.0, 33.5, 410.0];
        let path = dir.path().join("spine.nii.gz");
        save_nifti_mask(&mask, &path).unwrap();
        let back = load_nifti_mask(&path, &spine_map()).unwrap();
        assert_eq!(back.labels, mask.labels);
        for i in 0..3 {
            assert!((back.spacing[i] - mask.spacing[i]).abs() < 1e-5);
            assert!((back.origin[i] - mask.origin[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn float_data_with_integer_values_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nii");
        let header = NiftiHeader {
            pixdim: [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            sform_code: 1,
            srow_x: [-1.0, 0.0, 0.0, 0.0],
            srow_y: [0.0, -1.0, 0.0, 0.0],
            srow_z: [0.0, 0.0, 1.0, 0.0],
            ..NiftiHeader::default()
        };
        let mut data = Array3::<f32>::zeros((3, 3, 2));
        data[[2, 1, 1]] = 4.0;
        WriterOptions::new(&path)
            .reference_header(&header)
            .write_nifti(&data)
            .unwrap();
        let m = load_nifti_mask(&path, &BTreeMap::new()).unwrap();
        assert_eq!(m.labels[[2, 1, 1]], 4);
        assert_eq!(m.labels.iter().filter(|&&v| v != 0).count(), 1);

        data[[0, 0, 0]] = 0.5;
        WriterOptions::new(&path)
            .reference_header(&header)
            .write_nifti(&data)
            .unwrap();
        assert!(matches!(
            load_nifti_mask(&path, &BTreeMap::new()),
            Err(VolumeError::UnsupportedDatatype(_))
        ));
    }

    #[test]
    fn ras_oriented_file_is_flipped_into_canonical_frame() {
        // Identity affine: voxel x runs toward patient right-to-left is reversed.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ras.nii");
        let header = NiftiHeader {
            pixdim: [1.0, 2.0, 1.0, 3.0, 1.0, 1.0, 1.0, 1.0],
            sform_code: 1,
            srow_x: [2.0, 0.0, 0.0, 0.0],
            srow_y: [0.0, 1.0, 0.0, 0.0],
            srow_z: [0.0, 0.0, 3.0, 0.0],
            ..NiftiHeader::default()
        };
        let mut data = Array3::<u8>::zeros((4, 3, 2));
        data[[0, 0, 1]] = 9;
        WriterOptions::new(&path)
            .reference_header(&header)
            .write_nifti(&data)
            .unwrap();
        let m = load_nifti_mask(&path, &BTreeMap::new()).unwrap();
        assert_eq!(m.spacing, [2.0, 1.0, 3.0]);
        assert_eq!(m.labels[[3, 2, 1]], 9);
    }

    #[test]
    fn missing_orientation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noorient.nii");
        let header = NiftiHeader {
            qform_code: 0,
            sform_code: 0,
            ..NiftiHeader::default()
        };
        WriterOptions::new(&path)
            .reference_header(&header)
            .write_nifti(&Array3::<u8>::zeros((2, 2, 2)))
            .unwrap();
        assert!(matches!(
            load_nifti_mask(&path, &BTreeMap::new()),
            Err(VolumeError::OrientationUnresolvable(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn save_load_is_identity(
            dims in (1usize..6, 1usize..6, 1usize..5),
            seed in any::<u64>(),
            spacing in (0.3f64..3.0, 0.3f64..3.0, 0.5f64..5.0),
        ) {
            let mut state = seed | 1;
            let labels = Array3::from_shape_fn(dims, |_| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                (state % 7) as u16
            });
            let mask = SegmentationMask::new(labels, BTreeMap::new(), [spacing.0, spacing.1, spacing.2]);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.nii.gz");
            save_nifti_mask(&mask, &path).unwrap();
            let back = load_nifti_mask(&path, &BTreeMap::new()).unwrap();
            prop_assert_eq!(&back.labels, &mask.labels);
            for i in 0..3 {
                prop_assert!((back.spacing[i] - mask.spacing[i]).abs() < 1e-5);
            }
        }
    }
}
