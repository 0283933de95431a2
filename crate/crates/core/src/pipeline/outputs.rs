//! Writers for the per-series output files: metrics CSV and HDF5 tissue masks.

use std::ffi::CString;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{PipelineError, Result};
use crate::anatomy::{TissueClass, VertebralLevel};
use crate::tissue::{TissueMasks, TissueMetrics};

/// Tissue columns, in CSV order.
pub const CSV_TISSUES: [TissueClass; 4] = [TissueClass::Muscle, TissueClass::Imat, TissueClass::Vat, TissueClass::Sat];

/// One metrics row. `tissue` is `None` when the tissue stage failed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub level: Option<VertebralLevel>,
    pub dicom_path: String,
    pub spine_roi_hu: Option<f64>,
    pub tissue: Option<Vec<TissueMetrics>>,
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn tissue_header() -> Vec<String> {
    CSV_TISSUES
        .iter()
        .flat_map(|t| [format!("{}_area_cm2", t.name()), format!("{}_mean_hu", t.name())])
        .collect()
}

fn tissue_cells(metrics: Option<&[TissueMetrics]>) -> Vec<String> {
    let mut out = Vec::with_capacity(8);
    for t in CSV_TISSUES {
        let m = metrics.and_then(|ms| ms.iter().find(|m| m.tissue == t)).filter(|m| m.pixel_count > 0);
        out.push(num(m.map(|m| m.area_cm2)));
        out.push(num(m.and_then(|m| m.mean_hu)));
    }
    out
}

/// Header of the 3D metrics CSV.
pub fn csv_header_3d() -> Vec<String> {
    let mut h = vec!["level".to_string(), "dicom_path".into(), "spine_roi_hu".into()];
    h.extend(tissue_header());
    h
}

/// Header of the 2D metrics CSV.
pub fn csv_header_2d() -> Vec<String> {
    let mut h = vec!["dicom_path".to_string()];
    h.extend(tissue_header());
    h
}

/// Per-level metrics. Empty tissues and failed tissue stages leave their cells empty.
pub fn write_metrics_csv_3d<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header_3d())?;
    for r in rows {
        let mut rec = vec![
            r.level.map(|l| l.name().to_string()).unwrap_or_default(),
            r.dicom_path.clone(),
            num(r.spine_roi_hu),
        ];
        rec.extend(tissue_cells(r.tissue.as_deref()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-file metrics for axial slices.
pub fn write_metrics_csv_2d<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header_2d())?;
    for r in rows {
        let mut rec = vec![r.dicom_path.clone()];
        rec.extend(tissue_cells(r.tissue.as_deref()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Creates `name` under `file` without object timestamps so repeated runs
/// produce identical bytes.
fn create_untimed_group(file: &hdf5::File, name: &str) -> hdf5::Result<hdf5::Group> {
    use hdf5_sys::h5g::{H5Gclose, H5Gcreate2};
    use hdf5_sys::h5p::{H5Pclose, H5Pcreate, H5Pset_obj_track_times, H5P_DEFAULT};

    let cname = CString::new(name).map_err(|e| hdf5::Error::from(e.to_string()))?;
    let created = hdf5::sync::sync(|| unsafe {
        let gcpl = H5Pcreate(*hdf5::globals::H5P_GROUP_CREATE);
        if gcpl < 0 {
            return false;
        }
        let tracked = H5Pset_obj_track_times(gcpl, 0);
        let gid = H5Gcreate2(file.id(), cname.as_ptr(), H5P_DEFAULT, gcpl, H5P_DEFAULT);
        H5Pclose(gcpl);
        if gid < 0 {
            return false;
        }
        H5Gclose(gid);
        tracked >= 0
    });
    if !created {
        return Err(format!("cannot create group {name}").into());
    }
    file.group(name)
}

/// Writes the four tissue masks as `u8` datasets of shape `[ny, nx]` inside
/// group `model_id`. Missing tissues are written as all-zero.
pub fn write_tissue_h5(path: &Path, model_id: &str, masks: &TissueMasks, shape: (usize, usize)) -> Result<()> {
    let h5 = |e: hdf5::Error| PipelineError::Hdf5 { path: path.to_path_buf(), message: e.to_string() };
    let (nx, ny) = shape;
    let file = hdf5::File::with_options()
        .with_fcpl(|p| p.obj_track_times(false))
        .create(path)
        .map_err(h5)?;
    let group = create_untimed_group(&file, model_id).map_err(h5)?;
    let mut names: Vec<TissueClass> = TissueClass::ALL.to_vec();
    names.sort_by_key(|t| t.name());
    for t in names {
        let mut data = vec![0u8; nx * ny];
        if let Some(m) = masks.get(&t) {
            for ((x, y), &v) in m.indexed_iter() {
                data[y * nx + x] = v as u8;
            }
        }
        let ds = group.new_dataset::<u8>().shape((ny, nx)).create(t.name()).map_err(h5)?;
        ds.write_raw(&data).map_err(h5)?;
    }
    file.close().map_err(h5)?;
    Ok(())
}

/// Reads masks written by [`write_tissue_h5`] back into `[x, y]` arrays.
pub fn read_tissue_h5(path: &Path, model_id: &str) -> Result<TissueMasks> {
    let h5 = |e: hdf5::Error| PipelineError::Hdf5 { path: path.to_path_buf(), message: e.to_string() };
    let file = hdf5::File::open(path).map_err(h5)?;
    let group = file.group(model_id).map_err(h5)?;
    let mut out = TissueMasks::new();
    for t in TissueClass::ALL {
        let ds = group.dataset(t.name()).map_err(h5)?;
        let shape = ds.shape();
        if shape.len() != 2 {
            return Err(PipelineError::Hdf5 {
                path: path.to_path_buf(),
                message: format!("dataset {} has rank {}", t.name(), shape.len()),
            });
        }
        let (ny, nx) = (shape[0], shape[1]);
        let raw: Vec<u8> = ds.read_raw().map_err(h5)?;
        out.insert(t, Array2::from_shape_fn((nx, ny), |(x, y)| raw[y * nx + x] != 0));
    }
    Ok(out)
}
