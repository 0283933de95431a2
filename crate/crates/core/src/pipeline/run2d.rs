use std::path::{Path, PathBuf};

use ndarray::Axis;
use rayon::prelude::*;
use walkdir::WalkDir;

use super::outputs::{write_metrics_csv_2d, MetricsRow};
use super::run3d::{analyze_tissue, write_slice_outputs, Services};
use super::{
    create_output_tree, create_run_dir, dir_name, relative, thread_pool, unique_names, Mode, RecordStatus, Result,
    RunConfig, RunManifest, SeriesRecord, METRICS_FILE,
};
use crate::render::OverlayStyle;
use crate::segmentation::provider;
use crate::tissue::TissueMetrics;
use crate::volume::{is_dicom_file, load_axial_dicom};

/// DICOM files under `root` (or `root` itself when it is one), sorted by path.
pub fn find_dicom_files(root: &Path) -> Vec<PathBuf> {
    WalkDir::new(root)
        .follow_links(true)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && is_dicom_file(e.path()))
        .map(|e| e.into_path())
        .collect()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "slice".to_string())
}

fn process_file(
    cfg: &RunConfig,
    services: &Services,
    file: &Path,
    out_dir: &Path,
    name: &str,
) -> Result<(Vec<TissueMetrics>, Vec<PathBuf>)> {
    let slice = load_axial_dicom(file)?;
    let hu = slice.voxels.index_axis(Axis(2), 0);
    let z = slice.slice_z.first().copied().unwrap_or(slice.origin[2]);
    let origin = [slice.origin[0], slice.origin[1], z];
    let result = analyze_tissue(cfg, services, hu, slice.spacing, origin, file)?;
    let files = write_slice_outputs(cfg, services, out_dir, name, hu, &result, None)?;
    Ok((result.metrics, files))
}

/// Analyzes every axial DICOM under `cfg.input_path`. Outputs go to
/// `<run>/<input folder name>/`, named after each file's stem.
pub fn run_pipeline_2d(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let files = find_dicom_files(&cfg.input_path);
    let services = Services { spine: None, tissue: provider(&cfg.tissue_provider)?, style: OverlayStyle::default() };
    let (run_name, run_dir) = create_run_dir(&cfg.resolved_output_root(), chrono::Local::now().naive_local())?;
    if files.is_empty() {
        log::error!("no DICOM files found under {}", cfg.input_path.display());
    }
    let out_dir = run_dir.join(dir_name(&cfg.input_path));
    let names = unique_names(&files.iter().map(|f| stem(f)).collect::<Vec<_>>());
    let pool = thread_pool(cfg.workers)?;

    let mut records = Vec::with_capacity(files.len());
    let mut rows = Vec::new();
    if !files.is_empty() {
        create_output_tree(&out_dir)?;
        let results: Vec<_> = pool.install(|| {
            files
                .par_iter()
                .zip(names.par_iter())
                .map(|(f, name)| process_file(cfg, &services, f, &out_dir, name))
                .collect()
        });
        for (file, result) in files.iter().zip(results) {
            match result {
                Ok((metrics, written)) => {
                    rows.push(MetricsRow {
                        level: None,
                        dicom_path: file.display().to_string(),
                        spine_roi_hu: None,
                        tissue: Some(metrics),
                    });
                    records.push(SeriesRecord {
                        input: file.clone(),
                        status: RecordStatus::Ok,
                        reason: None,
                        warnings: vec![],
                        files: written.iter().map(|p| relative(&run_dir, p)).collect(),
                    });
                }
                Err(e) => records.push(SeriesRecord::failed(file, &e, vec![])),
            }
        }
        let csv_path = out_dir.join("metrics").join(METRICS_FILE);
        write_metrics_csv_2d(&rows, std::fs::File::create(&csv_path)?)?;
        let csv_rel = relative(&run_dir, &csv_path);
        for r in records.iter_mut().filter(|r| r.status == RecordStatus::Ok) {
            r.files.push(csv_rel.clone());
        }
    }

    let manifest = RunManifest { mode: Mode::Process2d, run_name, run_dir, records };
    manifest.save()?;
    Ok(manifest)
}
