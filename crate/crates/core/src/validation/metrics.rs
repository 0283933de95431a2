//! Dice overlap and spine ROI comparison against a reference segmentation.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayView, Dimension, Zip};

use super::{Result, ValidationError};
use crate::anatomy::{TissueClass, VertebralLevel};
use crate::spine::{
    body_center_2d, isolate_vertebral_body, rl_center_of_mass, sagittal_level_slice, superior_inferior_center,
    SpineError,
};
use crate::volume::{CtVolume, SegmentationMask};

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice<D: Dimension>(a: ArrayView<'_, bool, D>, b: ArrayView<'_, bool, D>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(ValidationError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    let (inter, na, nb) = Zip::from(&a).and(&b).fold((0u64, 0u64, 0u64), |(i, na, nb), &x, &y| {
        (i + (x && y) as u64, na + x as u64, nb + y as u64)
    });
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelValidation {
    pub level: VertebralLevel,
    pub vertical_center_error_mm: f64,
    pub roi_hu_error: f64,
    /// Relative to the reference ROI mean, in percent.
    pub roi_hu_pct_error: f64,
    pub pred_roi_hu: f64,
    pub ref_roi_hu: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub levels: Vec<LevelValidation>,
    pub tissue_dice: Vec<(TissueClass, f64)>,
}

/// Mean and median of `values`; `None` when empty.
pub fn mean_and_median(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut v = values.to_vec();
    let median = crate::spine::median_in_place(&mut v);
    Some((mean, median))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ValidationReport {
    pub fn vertical_errors(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.vertical_center_error_mm).collect()
    }

    pub fn hu_errors(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.roi_hu_error).collect()
    }

    pub fn hu_pct_errors(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.roi_hu_pct_error).collect()
    }

    pub fn dice_values(&self) -> Vec<f64> {
        self.tissue_dice.iter().map(|(_, d)| d).copied().collect()
    }

    pub fn is_zero(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.vertical_center_error_mm == 0.0 && l.roi_hu_error == 0.0 && l.roi_hu_pct_error == 0.0)
    }

    /// CSV with one row per level, one per tissue, then `mean` and `median` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["item", "vertical_center_error_mm", "roi_hu_error", "roi_hu_pct_error", "dice"])?;
        for l in &self.levels {
            w.write_record([
                l.level.name().to_string(),
                l.vertical_center_error_mm.to_string(),
                l.roi_hu_error.to_string(),
                l.roi_hu_pct_error.to_string(),
                String::new(),
            ])?;
        }
        for (t, d) in &self.tissue_dice {
            w.write_record([t.name().to_string(), String::new(), String::new(), String::new(), d.to_string()])?;
        }
        let cols = [self.vertical_errors(), self.hu_errors(), self.hu_pct_errors(), self.dice_values()];
        let stats: Vec<Option<(f64, f64)>> = cols.iter().map(|c| mean_and_median(c)).collect();
        for (name, pick) in [("mean", 0usize), ("median", 1)] {
            let mut row = vec![name.to_string()];
            row.extend(stats.iter().map(|s| cell(s.map(|(m, md)| if pick == 0 { m } else { md }))));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Offsets `-n/2 ..= n - 1 - n/2` of an `n`-voxel cube edge.
pub fn cube_offsets(n: usize) -> std::ops::RangeInclusive<i64> {
    let lo = -((n / 2) as i64);
    lo..=lo + n as i64 - 1
}

/// ROI center by the sagittal body-isolation procedure.
fn procedure_center(mask: &SegmentationMask, level: VertebralLevel) -> Result<[usize; 3]> {
    let x = rl_center_of_mass(mask, level)?;
    let body = isolate_vertebral_body(&sagittal_level_slice(mask, level, x))?;
    let (y, z) = body_center_2d(&body.body)?;
    Ok([x, y, z])
}

fn cube_mean(volume: &CtVolume, center: [usize; 3], n: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for dx in cube_offsets(n) {
        for dy in cube_offsets(n) {
            for dz in cube_offsets(n) {
                let p = [center[0] as i64 + dx, center[1] as i64 + dy, center[2] as i64 + dz];
                if !volume.contains(p) {
                    return Err(SpineError::RoiExceedsVolume { center }.into());
                }
                sum += volume.voxels[[p[0] as usize, p[1] as usize, p[2] as usize]];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(SpineError::EmptyRoi.into());
    }
    Ok(sum / count as f64)
}

/// Scores predicted spine levels against reference levels on the same volume:
/// vertical center error in mm, and the mean-HU difference between
/// `cube_px`-voxel cubes placed by the same procedure on each mask. Levels are
/// those present in the reference.
pub fn compare_spine(
    pred: &SegmentationMask,
    reference: &SegmentationMask,
    volume: &CtVolume,
    cube_px: usize,
) -> Result<ValidationReport> {
    for m in [pred, reference] {
        if m.shape() != volume.shape() {
            return Err(ValidationError::ShapeMismatch(m.shape().to_vec(), volume.shape().to_vec()));
        }
    }
    let levels: Vec<VertebralLevel> = VertebralLevel::ALL
        .into_iter()
        .filter(|&l| rl_center_of_mass(reference, l).is_ok())
        .collect();
    if levels.is_empty() {
        return Err(SpineError::EmptyMask.into());
    }
    let mut report = ValidationReport::default();
    for level in levels {
        let ref_z = superior_inferior_center(reference, level)?;
        let pred_z = superior_inferior_center(pred, level)?;
        let ref_hu = cube_mean(volume, procedure_center(reference, level)?, cube_px)?;
        let pred_hu = cube_mean(volume, procedure_center(pred, level)?, cube_px)?;
        let err = (pred_hu - ref_hu).abs();
        let pct = if err == 0.0 { 0.0 } else { err / ref_hu.abs() * 100.0 };
        report.levels.push(LevelValidation {
            level,
            vertical_center_error_mm: (pred_z as f64 - ref_z as f64).abs() * volume.spacing[2],
            roi_hu_error: err,
            roi_hu_pct_error: pct,
            pred_roi_hu: pred_hu,
            ref_roi_hu: ref_hu,
        });
    }
    Ok(report)
}
