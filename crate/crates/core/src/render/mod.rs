//! QA renderings: curved planar reformations through the spine ROIs and axial
//! tissue overlays with burned-in metrics.

pub mod cpr;
pub mod font;
pub mod overlay;
pub mod resample;

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;
use thiserror::Error;

use crate::anatomy::{TissueClass, VertebralLevel};

pub use cpr::{build_cpr_path, render_cpr, sample_cpr_plane, CprPath, CprPlane};
pub use overlay::{blend_tissues, format_metrics_line, render_axial_overlay, AxialOverlay};
pub use resample::{resample_image, resample_isotropic, resample_labels, resampled_len};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("a CPR path needs at least two ROI centers, got {0}")]
    FewerThanTwoCenters(usize),
    #[error("CPR path leaves the volume at row {row}: ({x:.3}, {y:.3}, {z:.3})")]
    PathOutOfBounds { row: usize, x: f64, y: f64, z: f64 },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, RenderError>;

/// Display window in HU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub width: f64,
    pub level: f64,
}

impl Window {
    pub const SOFT_TISSUE: Window = Window { width: 400.0, level: 50.0 };
    pub const BONE: Window = Window { width: 1800.0, level: 400.0 };

    /// Maps HU to an 8-bit gray value.
    pub fn apply(&self, hu: f64) -> u8 {
        let lo = self.level - self.width / 2.0;
        let v = (hu - lo) / self.width * 255.0;
        if v.is_nan() {
            0
        } else {
            v.clamp(0.0, 255.0).round() as u8
        }
    }
}

/// Colors and blend factor shared by all renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayStyle {
    pub tissue_colors: [(TissueClass, [u8; 3]); 4],
    pub level_colors: [(VertebralLevel, [u8; 3]); 6],
    pub alpha: f64,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        OverlayStyle {
            tissue_colors: [
                (TissueClass::Muscle, [255, 0, 0]),
                (TissueClass::Imat, [0, 0, 255]),
                (TissueClass::Vat, [0, 255, 0]),
                (TissueClass::Sat, [255, 255, 0]),
            ],
            level_colors: [
                (VertebralLevel::T12, [255, 0, 255]),
                (VertebralLevel::L1, [0, 255, 255]),
                (VertebralLevel::L2, [255, 165, 0]),
                (VertebralLevel::L3, [255, 255, 0]),
                (VertebralLevel::L4, [0, 255, 0]),
                (VertebralLevel::L5, [255, 255, 255]),
            ],
            alpha: 0.4,
        }
    }
}

impl OverlayStyle {
    pub fn tissue_color(&self, tissue: TissueClass) -> [u8; 3] {
        self.tissue_colors
            .iter()
            .find(|(t, _)| *t == tissue)
            .map(|(_, c)| *c)
            .unwrap_or([255, 255, 255])
    }

    pub fn level_color(&self, level: VertebralLevel) -> [u8; 3] {
        self.level_colors
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, c)| *c)
            .unwrap_or([255, 255, 255])
    }

    /// Checks that alpha lies in (0, 1] and that each palette is free of duplicates.
    pub fn is_valid(&self) -> bool {
        let distinct = |cs: &[[u8; 3]]| cs.iter().enumerate().all(|(i, a)| cs[i + 1..].iter().all(|b| a != b));
        let tissue: Vec<_> = self.tissue_colors.iter().map(|(_, c)| *c).collect();
        let level: Vec<_> = self.level_colors.iter().map(|(_, c)| *c).collect();
        self.alpha > 0.0 && self.alpha <= 1.0 && distinct(&tissue) && distinct(&level)
    }
}

/// Blends one channel: `(1 - alpha) * base + alpha * color`.
pub fn blend_channel(base: u8, color: u8, alpha: f64) -> u8 {
    ((1.0 - alpha) * base as f64 + alpha * color as f64).round().clamp(0.0, 255.0) as u8
}

/// Grayscale image of a `[col, row]` indexed HU plane.
pub fn windowed_gray(hu: ArrayView2<'_, f64>, window: Window) -> RgbImage {
    let (w, h) = hu.dim();
    RgbImage::from_fn(w as u32, h as u32, |c, r| {
        let g = window.apply(hu[[c as usize, r as usize]]);
        Rgb([g, g, g])
    })
}

/// Writes an 8-bit RGB PNG.
pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| RenderError::Write {
            path: path.display().to_string(),
            source,
        })
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

/// Outline of a circle of radius `r` pixels.
pub(crate) fn draw_circle(img: &mut RgbImage, cx: f64, cy: f64, r: f64, color: [u8; 3]) {
    let steps = ((2.0 * std::f64::consts::PI * r).ceil() as usize * 2).max(16);
    for k in 0..steps {
        let t = k as f64 / steps as f64 * 2.0 * std::f64::consts::PI;
        put(img, (cx + r * t.cos()).round() as i64, (cy + r * t.sin()).round() as i64, color);
    }
}

/// Outline of an axis-aligned square of half side `half` pixels.
pub(crate) fn draw_square(img: &mut RgbImage, cx: f64, cy: f64, half: f64, color: [u8; 3]) {
    let (x0, x1) = ((cx - half).round() as i64, (cx + half).round() as i64);
    let (y0, y1) = ((cy - half).round() as i64, (cy + half).round() as i64);
    for x in x0..=x1 {
        put(img, x, y0, color);
        put(img, x, y1, color);
    }
    for y in y0..=y1 {
        put(img, x0, y, color);
        put(img, x1, y, color);
    }
}

/// Horizontal dashed line across the full width at row `y`.
pub(crate) fn draw_dashed_row(img: &mut RgbImage, y: i64, dash: u32, color: [u8; 3]) {
    for x in 0..img.width() {
        if (x / dash) % 2 == 0 {
            put(img, x as i64, y, color);
        }
    }
}

/// Frame of `thickness` pixels along the image edges.
pub(crate) fn draw_border(img: &mut RgbImage, thickness: u32, color: [u8; 3]) {
    let (w, h) = (img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            if x < thickness || y < thickness || x + thickness >= w || y + thickness >= h {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

/// Text scale that keeps labels legible on large images.
pub(crate) fn text_scale(img: &RgbImage) -> u32 {
    (img.width().min(img.height()) / 256).max(1)
}

/// Draws lines of text right-aligned at the top-right corner.
pub(crate) fn draw_text_block_right(img: &mut RgbImage, lines: &[String], color: [u8; 3]) {
    let scale = text_scale(img);
    let margin = 4 * scale as i64;
    for (i, line) in lines.iter().enumerate() {
        let w = font::text_width(line, scale) as i64;
        let x = img.width() as i64 - margin - w;
        let y = margin + i as i64 * ((font::GLYPH_H + 3) * scale) as i64;
        font::draw_text(img, x, y, line, scale, color);
    }
}
