//! Vertebral trabecular ROI localization and superior-inferior level centers.
//!
//! Per level: the right-left center of mass picks a sagittal plane; on that plane
//! the two largest 8-connected components are the vertebral body and the spinous
//! process, and the posterior one is discarded; the 2D centroid of the body plus
//! the right-left center gives the ROI center. The superior-inferior center uses
//! every voxel of the level, processes included.
//!
//! All rounding is half away from zero.

use std::path::PathBuf;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::VertebralLevel;
use crate::components::{self, Connectivity};
use crate::volume::{CtVolume, SegmentationMask};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpineError {
    #[error("level {0} has no foreground voxels")]
    EmptyLevel(VertebralLevel),
    #[error("sagittal slice has no foreground pixels")]
    EmptySlice,
    #[error("mask is empty")]
    EmptyMask,
    #[error("ROI center {0:?} lies outside the volume")]
    CenterOutOfBounds([i64; 3]),
    #[error("ROI around {center:?} extends past the volume boundary")]
    RoiExceedsVolume { center: [usize; 3] },
    #[error("ROI contains no voxels")]
    EmptyRoi,
    #[error("mask shape {mask:?} does not match volume shape {volume:?}")]
    ShapeMismatch { mask: [usize; 3], volume: [usize; 3] },
    #[error("invalid ROI specification: {0}")]
    InvalidRoiSpec(String),
}

pub type Result<T, E = SpineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiShape {
    Sphere,
    Cube,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Median,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub shape: RoiShape,
    pub diameter_mm: f64,
    pub statistic: Statistic,
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec {
            shape: RoiShape::Sphere,
            diameter_mm: 10.0,
            statistic: Statistic::Median,
        }
    }
}

impl RoiSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.diameter_mm.is_finite() && self.diameter_mm > 0.0) {
            return Err(SpineError::InvalidRoiSpec(format!(
                "diameter must be positive, got {}",
                self.diameter_mm
            )));
        }
        Ok(())
    }
}

/// Outcome of the ROI procedure for one vertebral level.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineLevelResult {
    pub level: VertebralLevel,
    /// Sagittal slice (x index) through the level's right-left center of mass.
    pub rl_center_index: usize,
    /// Rounded (y, z) centroid of the isolated vertebral body on that slice.
    pub body_center_yz: (usize, usize),
    pub roi_center: [usize; 3],
    /// ROI voxel indices, sorted.
    pub roi_voxels: Vec<[usize; 3]>,
    pub hu_statistic: f64,
    /// Rounded mean z index of all the level's voxels.
    pub si_center_z: usize,
    /// Unrounded mean z index.
    pub si_mean_z: f64,
    /// Source file of axial slice `si_center_z`, when the volume came from files.
    pub si_center_path: Option<PathBuf>,
    /// The sagittal slice held a single component, taken as the body.
    pub single_component: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSkip {
    pub level: VertebralLevel,
    pub reason: SpineError,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpineAnalysis {
    pub results: Vec<SpineLevelResult>,
    pub skipped: Vec<LevelSkip>,
}

/// Voxel count and index sums for one level.
#[derive(Debug, Clone, Copy, Default)]
struct LevelMoments {
    count: u64,
    sum_x: u64,
    sum_z: u64,
}

impl LevelMoments {
    fn mean_x(&self) -> f64 {
        self.sum_x as f64 / self.count as f64
    }

    fn mean_z(&self) -> f64 {
        self.sum_z as f64 / self.count as f64
    }
}

/// Maps every label id to its vertebral level, if any.
fn level_lookup(mask: &SegmentationMask) -> Vec<Option<VertebralLevel>> {
    let max = mask.label_map.keys().copied().max().unwrap_or(0) as usize;
    let mut lut = vec![None; max + 1];
    for (&id, name) in &mask.label_map {
        if let Ok(level) = name.parse::<VertebralLevel>() {
            lut[id as usize] = Some(level);
        }
    }
    lut
}

fn level_moments(mask: &SegmentationMask) -> [LevelMoments; 6] {
    let lut = level_lookup(mask);
    let mut moments = [LevelMoments::default(); 6];
    for ((x, _, z), &l) in mask.labels.indexed_iter() {
        if let Some(Some(level)) = lut.get(l as usize) {
            let m = &mut moments[level.index()];
            m.count += 1;
            m.sum_x += x as u64;
            m.sum_z += z as u64;
        }
    }
    moments
}

fn moments_for(mask: &SegmentationMask, level: VertebralLevel) -> Result<LevelMoments> {
    let m = level_moments(mask)[level.index()];
    if m.count == 0 {
        return Err(SpineError::EmptyLevel(level));
    }
    Ok(m)
}

/// Index of the sagittal plane through the level's right-left center of mass.
pub fn rl_center_of_mass(mask: &SegmentationMask, level: VertebralLevel) -> Result<usize> {
    Ok(moments_for(mask, level)?.mean_x().round() as usize)
}

/// Rounded mean z index of every voxel of the level.
pub fn superior_inferior_center(mask: &SegmentationMask, level: VertebralLevel) -> Result<usize> {
    Ok(moments_for(mask, level)?.mean_z().round() as usize)
}

/// Binary sagittal slice `[y, z]` of the level at x index `x`.
pub fn sagittal_level_slice(mask: &SegmentationMask, level: VertebralLevel, x: usize) -> Array2<bool> {
    let ids = mask.ids_for(level.name());
    mask.labels
        .index_axis(Axis(0), x)
        .mapv(|l| l != 0 && ids.contains(&l))
}

/// The retained vertebral body on a sagittal slice.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyIsolation {
    pub body: Array2<bool>,
    pub single_component: bool,
}

/// Keeps the anterior of the two largest 8-connected components of a sagittal
/// slice `[y, z]` (larger y is more posterior). A slice with one component is
/// returned unchanged.
pub fn isolate_vertebral_body(slice: &Array2<bool>) -> Result<BodyIsolation> {
    let (labels, mut comps) = components::label(slice, Connectivity::Eight);
    if comps.is_empty() {
        return Err(SpineError::EmptySlice);
    }
    if comps.len() == 1 {
        return Ok(BodyIsolation {
            body: slice.clone(),
            single_component: true,
        });
    }
    // Size ties prefer the more anterior component.
    comps.sort_by(|a, b| {
        b.size
            .cmp(&a.size)
            .then(a.centroid()[0].total_cmp(&b.centroid()[0]))
            .then(a.label.cmp(&b.label))
    });
    let (first, second) = (&comps[0], &comps[1]);
    let keep = if second.centroid()[0] < first.centroid()[0] {
        second.label
    } else {
        first.label
    };
    Ok(BodyIsolation {
        body: labels.mapv(|l| l == keep),
        single_component: false,
    })
}

/// Rounded centroid `(y, z)` of a sagittal body mask `[y, z]`.
pub fn body_center_2d(body: &Array2<bool>) -> Result<(usize, usize)> {
    let (mut n, mut sy, mut sz) = (0u64, 0u64, 0u64);
    for ((y, z), &b) in body.indexed_iter() {
        if b {
            n += 1;
            sy += y as u64;
            sz += z as u64;
        }
    }
    if n == 0 {
        return Err(SpineError::EmptyMask);
    }
    let n = n as f64;
    Ok(((sy as f64 / n).round() as usize, (sz as f64 / n).round() as usize))
}

const INCLUSION_EPS: f64 = 1e-9;

/// Whether a voxel offset (in voxels) falls inside the ROI, using physical distances.
pub fn roi_contains(offset: [i64; 3], spacing: [f64; 3], spec: &RoiSpec) -> bool {
    let r = spec.diameter_mm / 2.0;
    let d = [
        offset[0] as f64 * spacing[0],
        offset[1] as f64 * spacing[1],
        offset[2] as f64 * spacing[2],
    ];
    match spec.shape {
        RoiShape::Sphere => d.iter().map(|v| v * v).sum::<f64>() <= r * r + INCLUSION_EPS,
        RoiShape::Cube => d.iter().all(|v| v.abs() <= r + INCLUSION_EPS),
    }
}

/// Voxels of the ROI centered on `center`, sorted. Fails rather than clipping
/// when the ROI does not fit in the volume.
pub fn build_roi(volume: &CtVolume, center: [usize; 3], spec: &RoiSpec) -> Result<Vec<[usize; 3]>> {
    spec.validate()?;
    let shape = volume.shape();
    let c = center.map(|v| v as i64);
    if !volume.contains(c) {
        return Err(SpineError::CenterOutOfBounds(c));
    }
    let r = spec.diameter_mm / 2.0;
    let reach = volume.spacing.map(|s| ((r + INCLUSION_EPS) / s).floor() as i64);
    let mut voxels = Vec::new();
    for dx in -reach[0]..=reach[0] {
        for dy in -reach[1]..=reach[1] {
            for dz in -reach[2]..=reach[2] {
                if !roi_contains([dx, dy, dz], volume.spacing, spec) {
                    continue;
                }
                let p = [c[0] + dx, c[1] + dy, c[2] + dz];
                if !volume.contains(p) {
                    return Err(SpineError::RoiExceedsVolume { center });
                }
                voxels.push([p[0] as usize, p[1] as usize, p[2] as usize]);
            }
        }
    }
    debug_assert!(shape.iter().all(|&n| n > 0));
    voxels.sort_unstable();
    Ok(voxels)
}

/// Mean or median HU over the ROI voxels. An even-sized median averages the two
/// middle values.
pub fn roi_statistic(volume: &CtVolume, voxels: &[[usize; 3]], statistic: Statistic) -> Result<f64> {
    if voxels.is_empty() {
        return Err(SpineError::EmptyRoi);
    }
    let mut values: Vec<f64> = voxels.iter().map(|&v| volume.voxels[v]).collect();
    Ok(match statistic {
        Statistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Statistic::Median => median_in_place(&mut values),
    })
}

pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lower, upper_mid, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper_mid;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

fn analyze_level(
    volume: &CtVolume,
    mask: &SegmentationMask,
    level: VertebralLevel,
    moments: LevelMoments,
    spec: &RoiSpec,
) -> Result<SpineLevelResult> {
    if moments.count == 0 {
        return Err(SpineError::EmptyLevel(level));
    }
    let x = moments.mean_x().round() as usize;
    let slice = sagittal_level_slice(mask, level, x);
    let isolated = isolate_vertebral_body(&slice)?;
    let (y, z) = body_center_2d(&isolated.body)?;
    let roi_center = [x, y, z];
    let roi_voxels = build_roi(volume, roi_center, spec)?;
    let hu_statistic = roi_statistic(volume, &roi_voxels, spec.statistic)?;
    let si_mean_z = moments.mean_z();
    let si_center_z = si_mean_z.round() as usize;
    Ok(SpineLevelResult {
        level,
        rl_center_index: x,
        body_center_yz: (y, z),
        roi_center,
        roi_voxels,
        hu_statistic,
        si_center_z,
        si_mean_z,
        si_center_path: volume.source_paths.get(si_center_z).cloned(),
        single_component: isolated.single_component,
    })
}

/// Runs the ROI procedure for T12 through L5. Levels that are absent or whose
/// ROI cannot be placed are reported in `skipped`; only a shape mismatch between
/// mask and volume is fatal.
pub fn analyze_spine(volume: &CtVolume, mask: &SegmentationMask, spec: &RoiSpec) -> Result<SpineAnalysis> {
    if mask.shape() != volume.shape() {
        return Err(SpineError::ShapeMismatch {
            mask: mask.shape(),
            volume: volume.shape(),
        });
    }
    spec.validate()?;
    let moments = level_moments(mask);
    let mut analysis = SpineAnalysis::default();
    for level in VertebralLevel::ALL {
        match analyze_level(volume, mask, level, moments[level.index()], spec) {
            Ok(r) => analysis.results.push(r),
            Err(reason) => analysis.skipped.push(LevelSkip { level, reason }),
        }
    }
    Ok(analysis)
}
