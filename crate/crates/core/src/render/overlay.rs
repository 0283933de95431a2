//! Axial overlays: windowed slice, tinted tissue masks, level border and label,
//! metrics text.

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use super::{blend_channel, draw_border, draw_text_block_right, font, text_scale, windowed_gray, OverlayStyle, Window};
use crate::anatomy::{TissueClass, VertebralLevel};
use crate::tissue::{TissueMasks, TissueMetrics};

#[derive(Debug, Clone, PartialEq)]
pub struct AxialOverlay {
    pub image: RgbImage,
    /// Metrics text burned into the upper right corner.
    pub text_lines: Vec<String>,
}

/// One line of burned-in metrics, e.g. `MUSCLE 152.31 CM2 38.7 HU`.
pub fn format_metrics_line(m: &TissueMetrics) -> String {
    let mean = m.mean_hu.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
    format!("{} {:.2} CM2 {} HU", m.tissue.name().to_uppercase(), m.area_cm2, mean)
}

/// Tints the pixels of every mask in `img` (`[x, y]` mask indexing). Pixels
/// outside all masks are left untouched.
pub fn blend_tissues(img: &mut RgbImage, masks: &TissueMasks, style: &OverlayStyle) {
    for tissue in TissueClass::ALL {
        let Some(mask) = masks.get(&tissue) else { continue };
        let color = style.tissue_color(tissue);
        for ((x, y), &on) in mask.indexed_iter() {
            if !on {
                continue;
            }
            let p = img.get_pixel_mut(x as u32, y as u32);
            let Rgb(base) = *p;
            *p = Rgb([
                blend_channel(base[0], color[0], style.alpha),
                blend_channel(base[1], color[1], style.alpha),
                blend_channel(base[2], color[2], style.alpha),
            ]);
        }
    }
}

/// Renders an axial slice `[x, y]` with soft-tissue windowing. When `level` is
/// given, a border and a label in the level's color are drawn.
pub fn render_axial_overlay(
    hu: ArrayView2<'_, f64>,
    masks: &TissueMasks,
    metrics: &[TissueMetrics],
    level: Option<VertebralLevel>,
    style: &OverlayStyle,
) -> AxialOverlay {
    let mut img = windowed_gray(hu, Window::SOFT_TISSUE);
    blend_tissues(&mut img, masks, style);
    let scale = text_scale(&img);
    if let Some(level) = level {
        let color = style.level_color(level);
        draw_border(&mut img, 2 * scale, color);
        font::draw_text(&mut img, 6 * scale as i64, 6 * scale as i64, level.name(), 2 * scale, color);
    }
    let text_lines: Vec<String> = metrics.iter().map(format_metrics_line).collect();
    draw_text_block_right(&mut img, &text_lines, [255, 255, 255]);
    AxialOverlay { image: img, text_lines }
}
