//! Model manifest: a key-value text file shipped next to a model.
//!
//! ```text
//! # muscle and adipose model
//! target = tissue_2d
//! input_size = 512 512
//! hu_window = -1024 1024
//! channels = background, muscle, bone, vat, sat
//! ```
//!
//! `input_size` lists x, y (and z for `spine_3d`). The network input is
//! `[1, 1, (z,) y, x]`, HU clipped to `hu_window` and scaled to [0, 1]. The
//! output holds one channel per entry of `channels`; channel 0 is background
//! and channel `i` becomes label `i`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{Result, SegError, SegTarget};

pub type ModelTarget = SegTarget;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelManifest {
    pub target: SegTarget,
    pub input_size: Vec<usize>,
    pub hu_window: (f64, f64),
    pub channels: Vec<String>,
}

impl ModelManifest {
    /// `<model>.manifest` next to the model file.
    pub fn path_for(model: &Path) -> PathBuf {
        model.with_extension("manifest")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SegError::InvalidManifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text).map_err(|reason| SegError::InvalidManifest {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut fields = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(format!("duplicate key {}", k.trim()));
            }
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| format!("missing key {k}"));

        let target = match get("target")?.as_str() {
            "tissue_2d" => SegTarget::Tissue2d,
            "spine_3d" => SegTarget::Spine3d,
            other => return Err(format!("unknown target {other}")),
        };
        let input_size = get("input_size")?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| format!("input_size: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let dims = if target == SegTarget::Tissue2d { 2 } else { 3 };
        if input_size.len() != dims || input_size.contains(&0) {
            return Err(format!("input_size needs {dims} positive values"));
        }
        let window: Vec<f64> = get("hu_window")?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| format!("hu_window: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        if window.len() != 2 || window[0] >= window[1] {
            return Err("hu_window needs min < max".into());
        }
        let channels: Vec<String> = get("channels")?.split(',').map(|c| c.trim().to_string()).collect();
        if channels.len() < 2 || channels.iter().any(String::is_empty) {
            return Err("channels needs background plus at least one class".into());
        }
        if fields.keys().any(|k| !["target", "input_size", "hu_window", "channels"].contains(&k.as_str())) {
            return Err("unknown key".into());
        }
        Ok(ModelManifest {
            target,
            input_size,
            hu_window: (window[0], window[1]),
            channels,
        })
    }

    /// Label value to class name for every non-background channel.
    pub fn class_map(&self) -> BTreeMap<u16, String> {
        self.channels
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| (i as u16, c.clone()))
            .collect()
    }
}
