//! Post-processing of 2D muscle/adipose masks and per-tissue area and density.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::TissueClass;
use crate::components::{self, Connectivity};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TissueError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("masks {0} and {1} overlap")]
    MasksOverlap(TissueClass, TissueClass),
    #[error("invalid post-processing config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = TissueError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostProcessConfig {
    /// Enclosed SAT holes smaller than this many pixels are filled.
    pub sat_hole_max_px: usize,
    /// Same, for muscle, IMAT and VAT.
    pub other_hole_max_px: usize,
    /// Muscle pixels with `imat_hu_low < HU < imat_hu_high` are IMAT candidates.
    pub imat_hu_low: f64,
    pub imat_hu_high: f64,
    /// IMAT components smaller than this revert to muscle.
    pub imat_min_component_px: usize,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        PostProcessConfig {
            sat_hole_max_px: 200,
            other_hole_max_px: 20,
            imat_hu_low: -190.0,
            imat_hu_high: -30.0,
            imat_min_component_px: 10,
        }
    }
}

impl PostProcessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.imat_hu_low < self.imat_hu_high) {
            return Err(TissueError::InvalidConfig(format!(
                "imat_hu_low ({}) must be below imat_hu_high ({})",
                self.imat_hu_low, self.imat_hu_high
            )));
        }
        Ok(())
    }

    pub fn hole_threshold(&self, tissue: TissueClass) -> usize {
        match tissue {
            TissueClass::Sat => self.sat_hole_max_px,
            _ => self.other_hole_max_px,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueMetrics {
    pub tissue: TissueClass,
    pub area_cm2: f64,
    /// `None` when the tissue has no pixels.
    pub mean_hu: Option<f64>,
    pub pixel_count: usize,
}

/// Binary masks per tissue class, all with the same shape.
pub type TissueMasks = BTreeMap<TissueClass, Array2<bool>>;

fn check_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(TissueError::ShapeMismatch(a, b));
    }
    Ok(())
}

/// Holes: 4-connected background components that do not touch the image border.
/// Holes smaller than the tissue's threshold become foreground.
pub fn fill_holes(mask: &Array2<bool>, tissue: TissueClass, cfg: &PostProcessConfig) -> Array2<bool> {
    let max = cfg.hole_threshold(tissue);
    let background = mask.mapv(|b| !b);
    let (labels, comps) = components::label(&background, Connectivity::Four);
    let fill: Vec<bool> = std::iter::once(false)
        .chain(comps.iter().map(|c| !c.touches_border && c.size < max))
        .collect();
    Zip::from(mask)
        .and(&labels)
        .map_collect(|&m, &l| m || fill[l as usize])
}

fn is_imat_hu(hu: f64, cfg: &PostProcessConfig) -> bool {
    hu > cfg.imat_hu_low && hu < cfg.imat_hu_high
}

/// Removes 8-connected components smaller than `min_px`, returning (kept, removed).
fn split_small_components(mask: &Array2<bool>, min_px: usize) -> (Array2<bool>, Array2<bool>) {
    let (labels, comps) = components::label(mask, Connectivity::Eight);
    let keep: Vec<bool> = std::iter::once(false)
        .chain(comps.iter().map(|c| c.size >= min_px))
        .collect();
    let kept = labels.mapv(|l| keep[l as usize]);
    let removed = Zip::from(mask).and(&kept).map_collect(|&m, &k| m && !k);
    (kept, removed)
}

/// Splits muscle into (muscle', imat): muscle pixels with HU strictly inside the
/// IMAT window form candidate components; components of at least
/// `imat_min_component_px` pixels become IMAT, smaller ones stay muscle.
pub fn relabel_imat(
    muscle: &Array2<bool>,
    hu: ArrayView2<'_, f64>,
    cfg: &PostProcessConfig,
) -> Result<(Array2<bool>, Array2<bool>)> {
    check_shape(muscle.dim(), hu.dim())?;
    let candidate = Zip::from(muscle)
        .and(hu)
        .map_collect(|&m, &h| m && is_imat_hu(h, cfg));
    let (imat, _) = split_small_components(&candidate, cfg.imat_min_component_px);
    let remaining = Zip::from(muscle).and(&imat).map_collect(|&m, &i| m && !i);
    Ok((remaining, imat))
}

/// Pixel count, area and mean HU for each tissue, in [`TissueClass::ALL`] order.
/// Tissues missing from `masks` are reported as empty.
pub fn compute_metrics(
    masks: &TissueMasks,
    hu: ArrayView2<'_, f64>,
    spacing: [f64; 2],
) -> Result<Vec<TissueMetrics>> {
    for m in masks.values() {
        check_shape(m.dim(), hu.dim())?;
    }
    let entries: Vec<_> = masks.iter().collect();
    for (i, (ta, a)) in entries.iter().enumerate() {
        for (tb, b) in &entries[i + 1..] {
            if Zip::from(*a).and(*b).fold(false, |acc, &x, &y| acc || (x && y)) {
                return Err(TissueError::MasksOverlap(**ta, **tb));
            }
        }
    }
    Ok(TissueClass::ALL
        .iter()
        .map(|&tissue| {
            let (count, sum) = masks.get(&tissue).map_or((0usize, 0.0), |m| {
                Zip::from(m)
                    .and(hu)
                    .fold((0usize, 0.0f64), |(n, s), &b, &h| if b { (n + 1, s + h) } else { (n, s) })
            });
            TissueMetrics {
                tissue,
                area_cm2: count as f64 * spacing[0] * spacing[1] / 100.0,
                mean_hu: (count > 0).then(|| sum / count as f64),
                pixel_count: count,
            }
        })
        .collect())
}

/// Raw model output for one slice. `imat` is `Some` only for models that
/// predict IMAT natively.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTissueMasks {
    pub muscle: Array2<bool>,
    pub vat: Array2<bool>,
    pub sat: Array2<bool>,
    pub imat: Option<Array2<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceResult {
    pub masks: TissueMasks,
    pub metrics: Vec<TissueMetrics>,
}

/// Hole filling per tissue, then IMAT relabeling, then metrics.
///
/// Hole filling runs in the order muscle, IMAT, VAT, SAT. A filled pixel is only
/// claimed when no raw mask and no earlier fill already owns it, so the outputs
/// stay disjoint.
pub fn process_slice(
    hu: ArrayView2<'_, f64>,
    raw: &RawTissueMasks,
    spacing: [f64; 2],
    cfg: &PostProcessConfig,
) -> Result<SliceResult> {
    cfg.validate()?;
    let shape = hu.dim();
    let mut ordered: Vec<(TissueClass, &Array2<bool>)> = vec![(TissueClass::Muscle, &raw.muscle)];
    if let Some(imat) = &raw.imat {
        ordered.push((TissueClass::Imat, imat));
    }
    ordered.push((TissueClass::Vat, &raw.vat));
    ordered.push((TissueClass::Sat, &raw.sat));
    for (_, m) in &ordered {
        check_shape(m.dim(), shape)?;
    }

    let mut claimed = Array2::from_elem(shape, false);
    for (_, m) in &ordered {
        Zip::from(&mut claimed).and(*m).for_each(|c, &b| *c |= b);
    }
    let mut filled: TissueMasks = BTreeMap::new();
    for (tissue, m) in &ordered {
        let grown = fill_holes(m, *tissue, cfg);
        let mut out = (*m).clone();
        Zip::from(&mut out)
            .and(&grown)
            .and(&mut claimed)
            .for_each(|o, &g, c| {
                if g && !*o && !*c {
                    *o = true;
                    *c = true;
                }
            });
        filled.insert(*tissue, out);
    }

    let muscle = filled.remove(&TissueClass::Muscle).expect("muscle is always present");
    let (muscle, imat) = match filled.remove(&TissueClass::Imat) {
        None => relabel_imat(&muscle, hu, cfg)?,
        Some(native) => {
            let (kept, removed) = split_small_components(&native, cfg.imat_min_component_px);
            let muscle = Zip::from(&muscle).and(&removed).map_collect(|&m, &r| m || r);
            (muscle, kept)
        }
    };
    filled.insert(TissueClass::Muscle, muscle);
    filled.insert(TissueClass::Imat, imat);

    let metrics = compute_metrics(&filled, hu, spacing)?;
    Ok(SliceResult {
        masks: filled,
        metrics,
    })
}
