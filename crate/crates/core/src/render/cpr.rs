//! Curved planar reformation along a piecewise-linear path through the ROI
//! centers.

use image::RgbImage;
use ndarray::{Array2, Array3};

use super::{
    draw_circle, draw_dashed_row, draw_square, draw_text_block_right, resample_image, resample_labels, windowed_gray,
    OverlayStyle, RenderError, Result, Window,
};
use crate::anatomy::VertebralLevel;
use crate::spine::{RoiShape, RoiSpec, SpineLevelResult};
use crate::volume::{CtVolume, SegmentationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CprPlane {
    /// Horizontal axis is volume y (anterior to posterior).
    Sagittal,
    /// Horizontal axis is volume x (right to left).
    Coronal,
}

impl CprPlane {
    pub fn name(self) -> &'static str {
        match self {
            CprPlane::Sagittal => "sagittal",
            CprPlane::Coronal => "coronal",
        }
    }
}

/// Path through the volume with one sample per output row. Row 0 is the most
/// superior slice.
#[derive(Debug, Clone, PartialEq)]
pub struct CprPath {
    /// Continuous voxel coordinates `[x, y, z]`.
    pub samples: Vec<[f64; 3]>,
    pub control_points: Vec<[f64; 3]>,
}

impl CprPath {
    /// Output row holding axial slice `z`.
    pub fn row_of_z(&self, z: f64) -> usize {
        let top = self.samples.first().map_or(0.0, |s| s[2]);
        (top - z).round().max(0.0) as usize
    }
}

/// Builds a path over axial slices `nz - 1` down to 0 that interpolates the
/// centers linearly in z and runs straight (constant x, y) beyond the outermost
/// centers. Centers are expected superior to inferior but are sorted by z
/// regardless.
pub fn build_cpr_path(centers: &[[f64; 3]], nz: usize) -> Result<CprPath> {
    if centers.len() < 2 {
        return Err(RenderError::FewerThanTwoCenters(centers.len()));
    }
    let mut sorted = centers.to_vec();
    sorted.sort_by(|a, b| a[2].total_cmp(&b[2]));
    let samples = (0..nz)
        .rev()
        .map(|k| {
            let z = k as f64;
            let [x, y] = interpolate(&sorted, z);
            [x, y, z]
        })
        .collect();
    Ok(CprPath {
        samples,
        control_points: centers.to_vec(),
    })
}

/// (x, y) on the polyline through `sorted` (ascending z) at height `z`.
fn interpolate(sorted: &[[f64; 3]], z: f64) -> [f64; 2] {
    let first = sorted[0];
    let last = sorted[sorted.len() - 1];
    if z <= first[2] {
        return [first[0], first[1]];
    }
    if z >= last[2] {
        return [last[0], last[1]];
    }
    let i = sorted.partition_point(|c| c[2] <= z);
    let (a, b) = (sorted[i - 1], sorted[i]);
    let t = (z - a[2]) / (b[2] - a[2]);
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn trilinear(v: &Array3<f64>, p: [f64; 3]) -> f64 {
    let dims = v.dim();
    let n = [dims.0, dims.1, dims.2];
    let mut i0 = [0usize; 3];
    let mut f = [0.0; 3];
    for a in 0..3 {
        let fl = p[a].floor();
        let mut i = fl as usize;
        let mut t = p[a] - fl;
        if i + 1 >= n[a] {
            i = n[a].saturating_sub(2);
            t = p[a] - i as f64;
            if n[a] == 1 {
                i = 0;
                t = 0.0;
            }
        }
        i0[a] = i;
        f[a] = t;
    }
    let mut acc = 0.0;
    for dx in 0..2 {
        let wx = if dx == 0 { 1.0 - f[0] } else { f[0] };
        if wx == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - f[1] } else { f[1] };
            if wy == 0.0 {
                continue;
            }
            for dz in 0..2 {
                let wz = if dz == 0 { 1.0 - f[2] } else { f[2] };
                if wz == 0.0 {
                    continue;
                }
                acc += wx * wy * wz * v[[i0[0] + dx, i0[1] + dy, i0[2] + dz]];
            }
        }
    }
    acc
}

fn check_path(path: &CprPath, shape: [usize; 3]) -> Result<()> {
    for (row, s) in path.samples.iter().enumerate() {
        let inside = (0..3).all(|a| s[a] >= 0.0 && s[a] <= (shape[a] - 1) as f64);
        if !inside {
            return Err(RenderError::PathOutOfBounds {
                row,
                x: s[0],
                y: s[1],
                z: s[2],
            });
        }
    }
    Ok(())
}

/// Point sampled at output pixel (`row`, `col`).
fn plane_point(path: &CprPath, plane: CprPlane, row: usize, col: usize) -> [f64; 3] {
    let s = path.samples[row];
    match plane {
        CprPlane::Coronal => [col as f64, s[1], s[2]],
        CprPlane::Sagittal => [s[0], col as f64, s[2]],
    }
}

/// HU image `[row, col]` extracted along the path on the volume's own grid, by
/// trilinear interpolation.
pub fn sample_cpr_plane(volume: &CtVolume, path: &CprPath, plane: CprPlane) -> Result<Array2<f64>> {
    let shape = volume.shape();
    check_path(path, shape)?;
    let width = match plane {
        CprPlane::Coronal => shape[0],
        CprPlane::Sagittal => shape[1],
    };
    Ok(Array2::from_shape_fn((path.samples.len(), width), |(r, c)| {
        trilinear(&volume.voxels, plane_point(path, plane, r, c))
    }))
}

fn sample_labels(mask: &SegmentationMask, path: &CprPath, plane: CprPlane, width: usize) -> Array2<u16> {
    let shape = mask.shape();
    Array2::from_shape_fn((path.samples.len(), width), |(r, c)| {
        let p = plane_point(path, plane, r, c);
        let idx: Vec<usize> = (0..3).map(|a| (p[a].round().max(0.0) as usize).min(shape[a] - 1)).collect();
        mask.labels[[idx[0], idx[1], idx[2]]]
    })
}

fn level_lut(mask: &SegmentationMask) -> impl Fn(u16) -> Option<VertebralLevel> + '_ {
    move |l| {
        if l == 0 {
            return None;
        }
        mask.label_map.get(&l).and_then(|n| n.parse().ok())
    }
}

/// Sagittal or coronal CPR rendered with bone windowing at isotropic pixel
/// size: level mask contours, ROI outlines, dashed superior-inferior centers
/// and per-level HU text in the upper right corner.
pub fn render_cpr(
    volume: &CtVolume,
    path: &CprPath,
    rois: &[SpineLevelResult],
    mask: Option<&SegmentationMask>,
    roi_spec: &RoiSpec,
    style: &OverlayStyle,
    plane: CprPlane,
) -> Result<RgbImage> {
    let plane_hu = sample_cpr_plane(volume, path, plane)?;
    let h_spacing = match plane {
        CprPlane::Coronal => volume.spacing[0],
        CprPlane::Sagittal => volume.spacing[1],
    };
    let spacing = [volume.spacing[2], h_spacing];
    let target = spacing[0].min(spacing[1]);
    let iso = resample_image(&plane_hu, spacing, target);
    let mut img = windowed_gray(iso.t(), Window::BONE);
    let row_px = |r: f64| r * spacing[0] / target;
    let col_px = |c: f64| c * spacing[1] / target;

    if let Some(mask) = mask {
        let labels = resample_labels(&sample_labels(mask, path, plane, plane_hu.ncols()), spacing, target);
        let lut = level_lut(mask);
        let (h, w) = labels.dim();
        for r in 0..h {
            for c in 0..w {
                let Some(level) = lut(labels[[r, c]]) else { continue };
                let edge = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dr, dc)| {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    nr < 0
                        || nc < 0
                        || nr >= h as i64
                        || nc >= w as i64
                        || lut(labels[[nr as usize, nc as usize]]) != Some(level)
                });
                if edge {
                    img.put_pixel(c as u32, r as u32, image::Rgb(style.level_color(level)));
                }
            }
        }
    }

    let radius_px = roi_spec.diameter_mm / 2.0 / target;
    let mut lines = Vec::new();
    for roi in rois {
        let color = style.level_color(roi.level);
        let [x, y, z] = roi.roi_center;
        let row = row_px(path.row_of_z(z as f64) as f64);
        let col = col_px(match plane {
            CprPlane::Coronal => x,
            CprPlane::Sagittal => y,
        } as f64);
        match roi_spec.shape {
            RoiShape::Sphere => draw_circle(&mut img, col, row, radius_px, color),
            RoiShape::Cube => draw_square(&mut img, col, row, radius_px, color),
        }
        let si_row = row_px(path.row_of_z(roi.si_center_z as f64) as f64).round() as i64;
        draw_dashed_row(&mut img, si_row, 6, color);
        lines.push((color, format!("{} {:.1} HU", roi.level, roi.hu_statistic)));
    }
    for (i, (color, line)) in lines.iter().enumerate() {
        let mut block = vec![String::new(); i];
        block.push(line.clone());
        draw_text_block_right(&mut img, &block, *color);
    }
    Ok(img)
}
