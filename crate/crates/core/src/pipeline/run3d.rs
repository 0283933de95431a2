use std::path::{Path, PathBuf};

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;

use super::outputs::{write_metrics_csv_3d, write_tissue_h5, MetricsRow};
use super::{
    create_output_tree, create_run_dir, dir_name, relative, thread_pool, unique_names, Mode, PipelineError, Result,
    RunConfig, RunManifest, SeriesRecord, METRICS_FILE,
};
use crate::render::{build_cpr_path, render_axial_overlay, render_cpr, save_png, CprPlane, OverlayStyle};
use crate::segmentation::{
    provider, raw_tissue_masks, SegTarget, SegmentationProvider, SegmentationRequest, SPINE_MODEL_ID,
};
use crate::spine::{analyze_spine, SpineLevelResult};
use crate::tissue::{process_slice, SliceResult};
use crate::volume::{discover_series, load_dicom_series, save_nifti_mask, CtVolume};

pub(super) struct Services {
    pub spine: Option<Box<dyn SegmentationProvider>>,
    pub tissue: Box<dyn SegmentationProvider>,
    pub style: OverlayStyle,
}

pub(super) struct Outcome {
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Index of the axial slice whose position is nearest the level's mean z
/// (given as a fractional slice index). Ties go to the inferior slice.
pub fn select_axial_index(slice_z: &[f64], mean_index: f64) -> usize {
    let n = slice_z.len();
    if n == 0 {
        return 0;
    }
    let m = mean_index.clamp(0.0, (n - 1) as f64);
    let lo = m.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let target = slice_z[lo] + (m - lo as f64) * (slice_z[hi] - slice_z[lo]);
    let tol = 1e-9 * (1.0 + target.abs());
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, &z) in slice_z.iter().enumerate() {
        let d = (z - target).abs();
        let better = d < best_d - tol || ((d - best_d).abs() <= tol && z < slice_z[best]);
        if better {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Segments one axial slice and post-processes the tissue masks.
pub(super) fn analyze_tissue(
    cfg: &RunConfig,
    services: &Services,
    hu: ArrayView2<'_, f64>,
    spacing: [f64; 3],
    origin: [f64; 3],
    source: &Path,
) -> Result<SliceResult> {
    let mut slice = CtVolume::new(hu.to_owned().insert_axis(Axis(2)), spacing, origin)?;
    slice.slice_z = vec![origin[2]];
    slice.source_paths = vec![source.to_path_buf()];
    let req = SegmentationRequest {
        target: SegTarget::Tissue2d,
        volume: &slice,
        model_id: cfg.tissue_model_id.clone(),
        source: Some(source.to_path_buf()),
    };
    let mask = services.tissue.segment(&req)?;
    let raw = raw_tissue_masks(&mask)?;
    Ok(process_slice(hu, &raw, [spacing[0], spacing[1]], &cfg.post)?)
}

/// Writes `<name>.h5` and, when enabled, `<name>.png` for one analyzed slice.
pub(super) fn write_slice_outputs(
    cfg: &RunConfig,
    services: &Services,
    out_dir: &Path,
    name: &str,
    hu: ArrayView2<'_, f64>,
    result: &SliceResult,
    level: Option<crate::anatomy::VertebralLevel>,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let h5 = out_dir.join("segmentations").join(format!("{name}.h5"));
    write_tissue_h5(&h5, &cfg.tissue_model_id, &result.masks, hu.dim())?;
    files.push(h5);
    if cfg.save_images {
        let png = out_dir.join("images").join(format!("{name}.png"));
        let overlay = render_axial_overlay(hu, &result.masks, &result.metrics, level, &services.style);
        save_png(&overlay.image, &png)?;
        files.push(png);
    }
    Ok(files)
}

fn render_cprs(
    cfg: &RunConfig,
    services: &Services,
    volume: &CtVolume,
    mask: &crate::volume::SegmentationMask,
    results: &[SpineLevelResult],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let centers: Vec<[f64; 3]> = results.iter().map(|r| r.roi_center.map(|c| c as f64)).collect();
    let path = build_cpr_path(&centers, volume.shape()[2])?;
    let mut files = Vec::new();
    for plane in [CprPlane::Sagittal, CprPlane::Coronal] {
        let img = render_cpr(volume, &path, results, Some(mask), &cfg.roi_spec, &services.style, plane)?;
        let file = out_dir.join("images").join(format!("spine_{}.png", plane.name()));
        save_png(&img, &file)?;
        files.push(file);
    }
    Ok(files)
}

fn process_series(cfg: &RunConfig, services: &Services, series_dir: &Path, out_dir: &Path) -> Result<Outcome> {
    let spine = services.spine.as_ref().ok_or_else(|| PipelineError::InvalidConfig("no spine provider".into()))?;
    let volume = load_dicom_series(series_dir)?;
    let req = SegmentationRequest {
        target: SegTarget::Spine3d,
        volume: &volume,
        model_id: SPINE_MODEL_ID.to_string(),
        source: Some(series_dir.to_path_buf()),
    };
    let mask = spine.segment(&req)?;
    let analysis = analyze_spine(&volume, &mask, &cfg.roi_spec)?;
    let mut warnings: Vec<String> = analysis
        .skipped
        .iter()
        .map(|s| format!("{} skipped: {}", s.level.name(), s.reason))
        .collect();
    if analysis.results.is_empty() {
        return Err(PipelineError::NoLevels(warnings.join("; ")));
    }

    create_output_tree(out_dir)?;
    let mut files = Vec::new();
    let spine_file = out_dir.join("segmentations").join("spine.nii.gz");
    save_nifti_mask(&mask, &spine_file)?;
    files.push(spine_file);

    let [sx, sy, sz] = volume.spacing;
    let mut rows = Vec::new();
    for r in &analysis.results {
        let k = select_axial_index(&volume.slice_z, r.si_mean_z);
        let source = volume.source_paths.get(k).cloned().unwrap_or_else(|| series_dir.to_path_buf());
        let z = volume.slice_z.get(k).copied().unwrap_or(volume.origin[2] + k as f64 * sz);
        let hu = volume.axial(k);
        let mut row = MetricsRow {
            level: Some(r.level),
            dicom_path: source.display().to_string(),
            spine_roi_hu: Some(r.hu_statistic),
            tissue: None,
        };
        let name = format!("{}_seg", r.level.name());
        let tissue = analyze_tissue(cfg, services, hu, [sx, sy, sz], [volume.origin[0], volume.origin[1], z], &source)
            .and_then(|res| {
                let written = write_slice_outputs(cfg, services, out_dir, &name, hu, &res, Some(r.level))?;
                Ok((res, written))
            });
        match tissue {
            Ok((res, written)) => {
                row.tissue = Some(res.metrics);
                files.extend(written);
            }
            Err(e) => {
                log::warn!("{}: {}: tissue analysis failed: {e}", series_dir.display(), r.level.name());
                warnings.push(format!("{}: tissue analysis failed: {e}", r.level.name()));
            }
        }
        rows.push(row);
    }

    if cfg.save_images {
        match render_cprs(cfg, services, &volume, &mask, &analysis.results, out_dir) {
            Ok(written) => files.extend(written),
            Err(e) => warnings.push(format!("spine rendering skipped: {e}")),
        }
    }

    let csv_path = out_dir.join("metrics").join(METRICS_FILE);
    write_metrics_csv_3d(&rows, std::fs::File::create(&csv_path)?)?;
    files.push(csv_path);
    Ok(Outcome { warnings, files })
}

/// Processes every series under `cfg.input_path`. Series with too few files are
/// recorded as skipped; a failing series is recorded and the run continues.
/// The manifest is saved into the run directory.
pub fn run_pipeline_3d(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let candidates = discover_series(&cfg.input_path, cfg.series_threshold)?;
    let services = Services {
        spine: Some(provider(&cfg.spine_provider)?),
        tissue: provider(&cfg.tissue_provider)?,
        style: OverlayStyle::default(),
    };
    let (run_name, run_dir) = create_run_dir(&cfg.resolved_output_root(), chrono::Local::now().naive_local())?;
    let names = unique_names(&candidates.iter().map(|c| dir_name(&c.directory)).collect::<Vec<_>>());
    let pool = thread_pool(cfg.workers)?;

    let records: Vec<SeriesRecord> = pool.install(|| {
        candidates
            .par_iter()
            .zip(names.par_iter())
            .map(|(c, name)| {
                if !c.is_3d_eligible {
                    return SeriesRecord::skipped(
                        &c.directory,
                        format!("{} DICOM files; 3D processing needs more than {}", c.file_count, cfg.series_threshold),
                    );
                }
                let out_dir = run_dir.join(name);
                log::info!("processing {}", c.directory.display());
                match process_series(cfg, &services, &c.directory, &out_dir) {
                    Ok(o) => SeriesRecord {
                        input: c.directory.clone(),
                        status: super::RecordStatus::Ok,
                        reason: None,
                        warnings: o.warnings,
                        files: o.files.iter().map(|f| relative(&run_dir, f)).collect(),
                    },
                    Err(e) => SeriesRecord::failed(&c.directory, &e, vec![]),
                }
            })
            .collect()
    });

    let manifest = RunManifest { mode: Mode::Process3d, run_name, run_dir, records };
    manifest.save()?;
    Ok(manifest)
}
