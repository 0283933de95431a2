//! Vertebral column phantom: per level, an upright cylindrical body with a
//! cortical shell and an optional posterior spinous-process box.
//!
//! Text format (lengths in mm, positions relative to voxel 0):
//!
//! ```text
//! shape = 512 512 300
//! spacing = 1 1 1.5
//! background_hu = -50
//! noise_sigma = 0
//! seed = 0
//! levels = T12 L1 L2 L3 L4 L5
//! L3.center_mm = 255.5 245.5 224
//! L3.radius_mm = 20
//! L3.half_height_mm = 12
//! L3.trabecular_hu = 160
//! L3.cortical_hu = 400
//! L3.shell_mm = 2
//! L3.process = 40 10 16 12   # y offset, then x y z size; or "none"
//! ```

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array3, Zip};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::{join, parse_kv, parse_numbers, required, Result, ValidationError};
use crate::anatomy::VertebralLevel;
use crate::segmentation::spine_class_map;
use crate::volume::{CtVolume, SegmentationMask};

/// Trabecular HU of T12 through L5 in the default phantom.
pub const DEFAULT_TRABECULAR_HU: [f64; 6] = [180.0, 170.0, 160.0, 150.0, 140.0, 130.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessSpec {
    /// Posterior (+y) distance from the body axis to the box center.
    pub offset_mm: f64,
    pub size_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelPhantomSpec {
    pub level: VertebralLevel,
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
    pub half_height_mm: f64,
    pub trabecular_hu: f64,
    pub cortical_hu: f64,
    pub shell_mm: f64,
    pub process: Option<ProcessSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinePhantomSpec {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub background_hu: f64,
    /// Standard deviation of additive Gaussian noise; 0 disables it.
    pub noise_sigma: f64,
    pub seed: u64,
    pub levels: Vec<LevelPhantomSpec>,
}

impl SpinePhantomSpec {
    /// Six levels stacked along the volume's vertical center line, T12 on top,
    /// 32 mm apart, with [`DEFAULT_TRABECULAR_HU`].
    pub fn straight(shape: [usize; 3], spacing: [f64; 3]) -> Self {
        let mid = |a: usize| (shape[a] - 1) as f64 * spacing[a] / 2.0;
        let pitch = 32.0;
        let levels = VertebralLevel::ALL
            .iter()
            .enumerate()
            .map(|(i, &level)| {
                // Centers snap to voxel positions so the geometry is symmetric on the grid.
                let snap = |v: f64, a: usize| (v / spacing[a]).round() * spacing[a];
                LevelPhantomSpec {
                    level,
                    center_mm: [
                        snap(mid(0), 0),
                        snap(mid(1) - 10.0, 1),
                        snap(mid(2) + (2.5 - i as f64) * pitch, 2),
                    ],
                    radius_mm: 20.0,
                    half_height_mm: 12.0,
                    trabecular_hu: DEFAULT_TRABECULAR_HU[i],
                    cortical_hu: 400.0,
                    shell_mm: 2.0,
                    process: Some(ProcessSpec {
                        offset_mm: 40.0,
                        size_mm: [10.0, 16.0, 12.0],
                    }),
                }
            })
            .collect();
        SpinePhantomSpec {
            shape,
            spacing,
            background_hu: -50.0,
            noise_sigma: 0.0,
            seed: 0,
            levels,
        }
    }

    pub fn without_processes(mut self) -> Self {
        for l in &mut self.levels {
            l.process = None;
        }
        self
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let shape: Vec<usize> = parse_numbers("shape", required(&kv, "shape")?, 3)?;
        let spacing: Vec<f64> = parse_numbers("spacing", required(&kv, "spacing")?, 3)?;
        let num = |key: &str| -> Result<f64> { Ok(parse_numbers::<f64>(key, required(&kv, key)?, 1)?[0]) };
        let mut levels = Vec::new();
        for name in required(&kv, "levels")?.split_whitespace() {
            let level: VertebralLevel = name
                .parse()
                .map_err(|_| ValidationError::Parse(format!("unknown level {name}")))?;
            let key = |f: &str| format!("{name}.{f}");
            let center: Vec<f64> = parse_numbers(&key("center_mm"), required(&kv, &key("center_mm"))?, 3)?;
            let process = match required(&kv, &key("process"))? {
                "none" => None,
                v => {
                    let p: Vec<f64> = parse_numbers(&key("process"), v, 4)?;
                    Some(ProcessSpec {
                        offset_mm: p[0],
                        size_mm: [p[1], p[2], p[3]],
                    })
                }
            };
            levels.push(LevelPhantomSpec {
                level,
                center_mm: [center[0], center[1], center[2]],
                radius_mm: num(&key("radius_mm"))?,
                half_height_mm: num(&key("half_height_mm"))?,
                trabecular_hu: num(&key("trabecular_hu"))?,
                cortical_hu: num(&key("cortical_hu"))?,
                shell_mm: num(&key("shell_mm"))?,
                process,
            });
        }
        Ok(SpinePhantomSpec {
            shape: [shape[0], shape[1], shape[2]],
            spacing: [spacing[0], spacing[1], spacing[2]],
            background_hu: num("background_hu")?,
            noise_sigma: kv.get("noise_sigma").map_or(Ok(0.0), |_| num("noise_sigma"))?,
            seed: kv.get("seed").map_or(Ok(0), |v| {
                v.parse().map_err(|_| ValidationError::Parse(format!("seed: cannot parse {v:?}")))
            })?,
            levels,
        })
    }

    /// Bounding box `[min, max]` in mm of everything the level draws.
    fn extent(l: &LevelPhantomSpec) -> [[f64; 3]; 2] {
        let c = l.center_mm;
        let mut lo = [c[0] - l.radius_mm, c[1] - l.radius_mm, c[2] - l.half_height_mm];
        let mut hi = [c[0] + l.radius_mm, c[1] + l.radius_mm, c[2] + l.half_height_mm];
        if let Some(p) = l.process {
            let pc = [c[0], c[1] + p.offset_mm, c[2]];
            for a in 0..3 {
                lo[a] = lo[a].min(pc[a] - p.size_mm[a] / 2.0);
                hi[a] = hi[a].max(pc[a] + p.size_mm[a] / 2.0);
            }
        }
        [lo, hi]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ValidationError::SpecInfeasible(m));
        if self.shape.contains(&0) || self.spacing.iter().any(|s| !(*s > 0.0)) {
            return bad("shape and spacing must be positive".into());
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be non-negative".into());
        }
        let mut seen = Vec::new();
        for l in &self.levels {
            if seen.contains(&l.level) {
                return bad(format!("{} appears twice", l.level));
            }
            seen.push(l.level);
            if !(l.radius_mm > l.shell_mm && l.half_height_mm > l.shell_mm && l.shell_mm >= 0.0) {
                return bad(format!("{}: shell must be thinner than the body", l.level));
            }
            let [lo, hi] = Self::extent(l);
            for a in 0..3 {
                let max = (self.shape[a] - 1) as f64 * self.spacing[a];
                if lo[a] < 0.0 || hi[a] > max {
                    return bad(format!("{} extends outside the volume", l.level));
                }
            }
            if let Some(p) = l.process {
                let gap = p.offset_mm - p.size_mm[1] / 2.0 - l.radius_mm;
                if gap < 2.0 * self.spacing[1] {
                    return bad(format!("{}: process must be separated from the body", l.level));
                }
                if p.size_mm.iter().any(|s| !(*s > 0.0)) {
                    return bad(format!("{}: process size must be positive", l.level));
                }
            }
        }
        for (i, a) in self.levels.iter().enumerate() {
            for b in &self.levels[i + 1..] {
                let [alo, ahi] = Self::extent(a);
                let [blo, bhi] = Self::extent(b);
                if (0..3).all(|k| alo[k] <= bhi[k] && blo[k] <= ahi[k]) {
                    return bad(format!("{} and {} overlap", a.level, b.level));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for SpinePhantomSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "shape = {}", join(&self.shape))?;
        writeln!(f, "spacing = {}", join(&self.spacing))?;
        writeln!(f, "background_hu = {}", self.background_hu)?;
        writeln!(f, "noise_sigma = {}", self.noise_sigma)?;
        writeln!(f, "seed = {}", self.seed)?;
        let names: Vec<&str> = self.levels.iter().map(|l| l.level.name()).collect();
        writeln!(f, "levels = {}", names.join(" "))?;
        for l in &self.levels {
            let n = l.level.name();
            writeln!(f, "{n}.center_mm = {}", join(&l.center_mm))?;
            writeln!(f, "{n}.radius_mm = {}", l.radius_mm)?;
            writeln!(f, "{n}.half_height_mm = {}", l.half_height_mm)?;
            writeln!(f, "{n}.trabecular_hu = {}", l.trabecular_hu)?;
            writeln!(f, "{n}.cortical_hu = {}", l.cortical_hu)?;
            writeln!(f, "{n}.shell_mm = {}", l.shell_mm)?;
            match l.process {
                None => writeln!(f, "{n}.process = none")?,
                Some(p) => writeln!(f, "{n}.process = {} {}", p.offset_mm, join(&p.size_mm))?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTruth {
    pub level: VertebralLevel,
    /// Body center in continuous voxel coordinates.
    pub center_index: [f64; 3],
    pub trabecular_hu: f64,
    /// Exact mean z index of the level's labeled voxels.
    pub si_mean_z: f64,
    pub voxel_count: usize,
}

#[derive(Debug, Clone)]
pub struct SpinePhantom {
    pub volume: CtVolume,
    pub mask: SegmentationMask,
    pub truth: Vec<LevelTruth>,
}

fn level_label(level: VertebralLevel) -> u16 {
    spine_class_map()
        .into_iter()
        .find(|(_, n)| n == level.name())
        .map(|(id, _)| id)
        .expect("every level has a label")
}

fn index_range(lo_mm: f64, hi_mm: f64, spacing: f64, n: usize) -> std::ops::RangeInclusive<usize> {
    let lo = (lo_mm / spacing - 1e-9).ceil().max(0.0) as usize;
    let hi = ((hi_mm / spacing + 1e-9).floor() as usize).min(n - 1);
    lo..=hi
}

/// Renders the phantom. Labels use the default spine class map.
pub fn generate_spine_phantom(spec: &SpinePhantomSpec) -> Result<SpinePhantom> {
    spec.validate()?;
    let sp = spec.spacing;
    let mut voxels = Array3::from_elem(spec.shape, spec.background_hu);
    let mut labels = Array3::<u16>::zeros(spec.shape);
    let mut truth = Vec::new();
    const EPS: f64 = 1e-9;

    for l in &spec.levels {
        let id = level_label(l.level);
        let c = l.center_mm;
        let (inner_r, inner_h) = (l.radius_mm - l.shell_mm, l.half_height_mm - l.shell_mm);
        let mut count = 0usize;
        let mut sum_z = 0u64;
        let [lo, hi] = SpinePhantomSpec::extent(l);
        for x in index_range(lo[0], hi[0], sp[0], spec.shape[0]) {
            for y in index_range(lo[1], hi[1], sp[1], spec.shape[1]) {
                for z in index_range(lo[2], hi[2], sp[2], spec.shape[2]) {
                    let d = [x as f64 * sp[0] - c[0], y as f64 * sp[1] - c[1], z as f64 * sp[2] - c[2]];
                    let rho2 = d[0] * d[0] + d[1] * d[1];
                    let hu = if rho2 <= l.radius_mm * l.radius_mm + EPS && d[2].abs() <= l.half_height_mm + EPS {
                        let inner = rho2 <= inner_r * inner_r + EPS && d[2].abs() <= inner_h + EPS;
                        Some(if inner { l.trabecular_hu } else { l.cortical_hu })
                    } else {
                        l.process.and_then(|p| {
                            let inside = d[0].abs() <= p.size_mm[0] / 2.0 + EPS
                                && (d[1] - p.offset_mm).abs() <= p.size_mm[1] / 2.0 + EPS
                                && d[2].abs() <= p.size_mm[2] / 2.0 + EPS;
                            inside.then_some(l.cortical_hu)
                        })
                    };
                    if let Some(hu) = hu {
                        voxels[[x, y, z]] = hu;
                        labels[[x, y, z]] = id;
                        count += 1;
                        sum_z += z as u64;
                    }
                }
            }
        }
        if count == 0 {
            return Err(ValidationError::SpecInfeasible(format!("{} covers no voxel", l.level)));
        }
        truth.push(LevelTruth {
            level: l.level,
            center_index: [c[0] / sp[0], c[1] / sp[1], c[2] / sp[2]],
            trabecular_hu: l.trabecular_hu,
            si_mean_z: sum_z as f64 / count as f64,
            voxel_count: count,
        });
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| ValidationError::SpecInfeasible(e.to_string()))?;
        let mut rng = StdRng::seed_from_u64(spec.seed);
        Zip::from(&mut voxels).for_each(|v| *v += normal.sample(&mut rng));
    }

    let volume = CtVolume::new(voxels, sp, [0.0; 3]).map_err(|e| ValidationError::SpecInfeasible(e.to_string()))?;
    let mut label_map = BTreeMap::new();
    for l in &spec.levels {
        label_map.insert(level_label(l.level), l.level.name().to_string());
    }
    let mask = SegmentationMask::new(labels, label_map, sp);
    Ok(SpinePhantom { volume, mask, truth })
}
