//! Axial body phantom: nested ellipses for SAT, muscle and VAT, with optional
//! low-density pockets inside muscle and unlabeled holes inside any tissue.
//!
//! A pixel's normalized radius is `sqrt(((x-cx)/a)^2 + ((y-cy)/b)^2)` with the
//! body semi-axes `a`, `b` in pixels. SAT covers `(muscle_radius, 1]`, muscle
//! `(vat_radius, muscle_radius]`, VAT `[0, vat_radius]`.
//!
//! ```text
//! shape = 256 256
//! spacing = 0.8 0.8
//! center = 127.5 127.5
//! semi_axes = 110 90
//! muscle_radius = 0.8
//! vat_radius = 0.55
//! background_hu = -1000
//! sat_hu = -100
//! muscle_hu = 40
//! vat_hu = -90
//! pocket.1 = 210 128 30 -100   # x y size_px hu
//! hole.1 = sat 127 30 150      # tissue x y size_px
//! ```

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;

use super::{join, parse_kv, parse_numbers, required, Result, ValidationError};
use crate::anatomy::TissueClass;
use crate::tissue::{PostProcessConfig, RawTissueMasks, TissueMasks};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PocketSpec {
    pub x: f64,
    pub y: f64,
    pub size_px: usize,
    pub hu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleSpec {
    pub tissue: TissueClass,
    pub x: f64,
    pub y: f64,
    pub size_px: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePhantomSpec {
    pub shape: [usize; 2],
    pub spacing: [f64; 2],
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub muscle_radius: f64,
    pub vat_radius: f64,
    pub background_hu: f64,
    pub sat_hu: f64,
    pub muscle_hu: f64,
    pub vat_hu: f64,
    pub pockets: Vec<PocketSpec>,
    pub holes: Vec<HoleSpec>,
}

impl SlicePhantomSpec {
    /// Body filling most of a `shape` slice, no pockets or holes.
    pub fn basic(shape: [usize; 2], spacing: [f64; 2]) -> Self {
        SlicePhantomSpec {
            shape,
            spacing,
            center: [(shape[0] - 1) as f64 / 2.0, (shape[1] - 1) as f64 / 2.0],
            semi_axes: [shape[0] as f64 * 0.43, shape[1] as f64 * 0.35],
            muscle_radius: 0.8,
            vat_radius: 0.55,
            background_hu: -1000.0,
            sat_hu: -100.0,
            muscle_hu: 40.0,
            vat_hu: -90.0,
            pockets: Vec::new(),
            holes: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let pair = |key: &str| -> Result<[f64; 2]> {
            let v: Vec<f64> = parse_numbers(key, required(&kv, key)?, 2)?;
            Ok([v[0], v[1]])
        };
        let num = |key: &str| -> Result<f64> { Ok(parse_numbers::<f64>(key, required(&kv, key)?, 1)?[0]) };
        let shape: Vec<usize> = parse_numbers("shape", required(&kv, "shape")?, 2)?;
        let mut pockets = Vec::new();
        let mut holes = Vec::new();
        let numbered = |prefix: &str| -> Vec<(u32, &String)> {
            let mut v: Vec<(u32, &String)> = kv
                .iter()
                .filter_map(|(k, val)| k.strip_prefix(prefix).and_then(|n| n.parse().ok()).map(|n| (n, val)))
                .collect();
            v.sort_by_key(|(n, _)| *n);
            v
        };
        for (_, v) in numbered("pocket.") {
            let p: Vec<f64> = parse_numbers("pocket", v, 4)?;
            pockets.push(PocketSpec {
                x: p[0],
                y: p[1],
                size_px: p[2] as usize,
                hu: p[3],
            });
        }
        for (_, v) in numbered("hole.") {
            let mut parts = v.splitn(2, char::is_whitespace);
            let tissue: TissueClass = parts
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|_| ValidationError::Parse(format!("hole: bad tissue in {v:?}")))?;
            let p: Vec<f64> = parse_numbers("hole", parts.next().unwrap_or(""), 3)?;
            holes.push(HoleSpec {
                tissue,
                x: p[0],
                y: p[1],
                size_px: p[2] as usize,
            });
        }
        Ok(SlicePhantomSpec {
            shape: [shape[0], shape[1]],
            spacing: pair("spacing")?,
            center: pair("center")?,
            semi_axes: pair("semi_axes")?,
            muscle_radius: num("muscle_radius")?,
            vat_radius: num("vat_radius")?,
            background_hu: num("background_hu")?,
            sat_hu: num("sat_hu")?,
            muscle_hu: num("muscle_hu")?,
            vat_hu: num("vat_hu")?,
            pockets,
            holes,
        })
    }
}

impl fmt::Display for SlicePhantomSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "shape = {}", join(&self.shape))?;
        writeln!(f, "spacing = {}", join(&self.spacing))?;
        writeln!(f, "center = {}", join(&self.center))?;
        writeln!(f, "semi_axes = {}", join(&self.semi_axes))?;
        writeln!(f, "muscle_radius = {}", self.muscle_radius)?;
        writeln!(f, "vat_radius = {}", self.vat_radius)?;
        writeln!(f, "background_hu = {}", self.background_hu)?;
        writeln!(f, "sat_hu = {}", self.sat_hu)?;
        writeln!(f, "muscle_hu = {}", self.muscle_hu)?;
        writeln!(f, "vat_hu = {}", self.vat_hu)?;
        for (i, p) in self.pockets.iter().enumerate() {
            writeln!(f, "pocket.{} = {} {} {} {}", i + 1, p.x, p.y, p.size_px, p.hu)?;
        }
        for (i, h) in self.holes.iter().enumerate() {
            writeln!(f, "hole.{} = {} {} {} {}", i + 1, h.tissue, h.x, h.y, h.size_px)?;
        }
        Ok(())
    }
}

/// Exact expected outcome of post-processing the phantom's raw masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTruth {
    pub masks: TissueMasks,
    pub pixel_counts: BTreeMap<TissueClass, usize>,
    /// `None` for tissues without pixels.
    pub mean_hu: BTreeMap<TissueClass, Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct SlicePhantom {
    /// HU indexed `[x, y]`.
    pub hu: Array2<f64>,
    /// Perfect compartments with holes cut out; pockets remain muscle.
    pub raw: RawTissueMasks,
    pub truth: SliceTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Background,
    Tissue(TissueClass),
}

/// The `n` pixels nearest to (`x`, `y`) satisfying `allowed`; ties in raster order.
fn nearest_pixels(shape: [usize; 2], x: f64, y: f64, n: usize, allowed: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for py in 0..shape[1] {
        for px in 0..shape[0] {
            if allowed(px, py) {
                let d = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
                cand.push((d, py, px));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    cand.into_iter().take(n).map(|(_, py, px)| (px, py)).collect()
}

fn neighbours4(shape: [usize; 2], x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> {
    [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].into_iter().filter_map(move |(dx, dy)| {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        (nx >= 0 && ny >= 0 && nx < shape[0] as i64 && ny < shape[1] as i64).then_some((nx as usize, ny as usize))
    })
}

/// Renders the phantom and derives the expected post-processing result from
/// the construction under `cfg`.
pub fn generate_slice_phantom(spec: &SlicePhantomSpec, cfg: &PostProcessConfig) -> Result<SlicePhantom> {
    let bad = |m: String| ValidationError::SpecInfeasible(m);
    if !(0.0 < spec.vat_radius && spec.vat_radius < spec.muscle_radius && spec.muscle_radius < 1.0) {
        return Err(bad("radii must satisfy 0 < vat_radius < muscle_radius < 1".into()));
    }
    if spec.shape.contains(&0) || spec.semi_axes.iter().any(|a| !(*a > 0.0)) || spec.spacing.iter().any(|s| !(*s > 0.0)) {
        return Err(bad("shape, spacing and semi-axes must be positive".into()));
    }
    let shape = spec.shape;
    let [cx, cy] = spec.center;
    let [a, b] = spec.semi_axes;
    let cells = Array2::from_shape_fn((shape[0], shape[1]), |(x, y)| {
        let rho = (((x as f64 - cx) / a).powi(2) + ((y as f64 - cy) / b).powi(2)).sqrt();
        if rho > 1.0 {
            Cell::Background
        } else if rho > spec.muscle_radius {
            Cell::Tissue(TissueClass::Sat)
        } else if rho > spec.vat_radius {
            Cell::Tissue(TissueClass::Muscle)
        } else {
            Cell::Tissue(TissueClass::Vat)
        }
    });
    let on_border = cells
        .indexed_iter()
        .any(|((x, y), &c)| c != Cell::Background && (x == 0 || y == 0 || x + 1 == shape[0] || y + 1 == shape[1]));
    if on_border {
        return Err(bad("body touches the image border".into()));
    }
    let tissue_hu = |t: TissueClass| match t {
        TissueClass::Sat => spec.sat_hu,
        TissueClass::Vat => spec.vat_hu,
        _ => spec.muscle_hu,
    };
    let mut hu = cells.mapv(|c| match c {
        Cell::Background => spec.background_hu,
        Cell::Tissue(t) => tissue_hu(t),
    });

    // 0 = free, otherwise 1-based pocket index.
    let mut pocket_id = Array2::<usize>::zeros((shape[0], shape[1]));
    for (i, p) in spec.pockets.iter().enumerate() {
        let px = nearest_pixels(shape, p.x, p.y, p.size_px, |x, y| {
            cells[[x, y]] == Cell::Tissue(TissueClass::Muscle) && pocket_id[[x, y]] == 0
        });
        if px.len() != p.size_px {
            return Err(bad(format!("pocket {} does not fit in muscle", i + 1)));
        }
        for &(x, y) in &px {
            pocket_id[[x, y]] = i + 1;
            hu[[x, y]] = p.hu;
        }
    }
    for x in 0..shape[0] {
        for y in 0..shape[1] {
            let id = pocket_id[[x, y]];
            if id == 0 {
                continue;
            }
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= shape[0] as i64 || ny >= shape[1] as i64 {
                        continue;
                    }
                    let other = pocket_id[[nx as usize, ny as usize]];
                    if other != 0 && other != id {
                        return Err(bad("pockets touch each other".into()));
                    }
                    if cells[[nx as usize, ny as usize]] != Cell::Tissue(TissueClass::Muscle) {
                        return Err(bad(format!("pocket {id} touches the muscle boundary")));
                    }
                }
            }
        }
    }

    let mut hole_id = Array2::<usize>::zeros((shape[0], shape[1]));
    for (i, h) in spec.holes.iter().enumerate() {
        let px = nearest_pixels(shape, h.x, h.y, h.size_px, |x, y| {
            cells[[x, y]] == Cell::Tissue(h.tissue) && pocket_id[[x, y]] == 0 && hole_id[[x, y]] == 0
        });
        if px.len() != h.size_px || h.size_px == 0 {
            return Err(bad(format!("hole {} does not fit in {}", i + 1, h.tissue)));
        }
        for &(x, y) in &px {
            hole_id[[x, y]] = i + 1;
        }
    }
    for x in 0..shape[0] {
        for y in 0..shape[1] {
            let id = hole_id[[x, y]];
            if id == 0 {
                continue;
            }
            let tissue = spec.holes[id - 1].tissue;
            for (nx, ny) in neighbours4(shape, x, y) {
                let n_id = hole_id[[nx, ny]];
                let enclosed = if n_id != 0 {
                    n_id == id
                } else {
                    cells[[nx, ny]] == Cell::Tissue(tissue)
                };
                if !enclosed || x == 0 || y == 0 || x + 1 == shape[0] || y + 1 == shape[1] {
                    return Err(bad(format!("hole {id} is not enclosed by {tissue}")));
                }
            }
        }
    }

    let raw_mask = |t: TissueClass| {
        Array2::from_shape_fn((shape[0], shape[1]), |(x, y)| cells[[x, y]] == Cell::Tissue(t) && hole_id[[x, y]] == 0)
    };
    let raw = RawTissueMasks {
        muscle: raw_mask(TissueClass::Muscle),
        vat: raw_mask(TissueClass::Vat),
        sat: raw_mask(TissueClass::Sat),
        imat: None,
    };

    let pocket_is_imat: Vec<bool> = spec
        .pockets
        .iter()
        .map(|p| p.hu > cfg.imat_hu_low && p.hu < cfg.imat_hu_high && p.size_px >= cfg.imat_min_component_px)
        .collect();
    let hole_filled: Vec<bool> = spec
        .holes
        .iter()
        .map(|h| h.size_px < cfg.hole_threshold(h.tissue))
        .collect();
    let expected_class = |x: usize, y: usize| -> Option<TissueClass> {
        let Cell::Tissue(t) = cells[[x, y]] else { return None };
        let h = hole_id[[x, y]];
        if h != 0 && !hole_filled[h - 1] {
            return None;
        }
        let p = pocket_id[[x, y]];
        if p != 0 && pocket_is_imat[p - 1] {
            return Some(TissueClass::Imat);
        }
        Some(t)
    };
    let mut masks = TissueMasks::new();
    let mut pixel_counts = BTreeMap::new();
    let mut mean_hu = BTreeMap::new();
    for t in TissueClass::ALL {
        let m = Array2::from_shape_fn((shape[0], shape[1]), |(x, y)| expected_class(x, y) == Some(t));
        let (n, s) = m
            .indexed_iter()
            .filter(|(_, &on)| on)
            .fold((0usize, 0.0), |(n, s), ((x, y), _)| (n + 1, s + hu[[x, y]]));
        pixel_counts.insert(t, n);
        mean_hu.insert(t, (n > 0).then(|| s / n as f64));
        masks.insert(t, m);
    }
    Ok(SlicePhantom {
        hu,
        raw,
        truth: SliceTruth {
            masks,
            pixel_counts,
            mean_hu,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut spec = SlicePhantomSpec::basic([128, 128], [0.8, 0.8]);
        spec.pockets.push(PocketSpec {
            x: 100.0,
            y: 64.0,
            size_px: 30,
            hu: -100.0,
        });
        spec.holes.push(HoleSpec {
            tissue: TissueClass::Sat,
            x: 63.5,
            y: 22.0,
            size_px: 12,
        });
        assert_eq!(SlicePhantomSpec::parse(&spec.to_string()).unwrap(), spec);
    }

    #[test]
    fn compartments_partition_the_body() {
        let spec = SlicePhantomSpec::basic([128, 128], [0.8, 0.8]);
        let ph = generate_slice_phantom(&spec, &PostProcessConfig::default()).unwrap();
        let total: usize = ph.truth.pixel_counts.values().sum();
        let body = ph.hu.iter().filter(|&&v| v != spec.background_hu).count();
        assert_eq!(total, body);
        assert_eq!(ph.truth.pixel_counts[&TissueClass::Imat], 0);
        assert_eq!(ph.truth.mean_hu[&TissueClass::Vat], Some(-90.0));
    }

    #[test]
    fn pocket_on_boundary_is_infeasible() {
        let mut spec = SlicePhantomSpec::basic([128, 128], [0.8, 0.8]);
        spec.pockets.push(PocketSpec {
            x: 0.0,
            y: 0.0,
            size_px: 5,
            hu: -100.0,
        });
        assert!(generate_slice_phantom(&spec, &PostProcessConfig::default()).is_err());
    }
}
