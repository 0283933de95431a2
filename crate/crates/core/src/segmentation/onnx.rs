//! Model-runtime provider. Pre- and post-processing are plain array code; the
//! network itself runs through `tract-onnx` when the `onnx` feature is enabled.

use std::path::Path;

use ndarray::Array3;

use super::{ProviderConfig, Result, SegError};

/// Clips HU to `window` and scales to [0, 1].
pub fn normalize_hu(hu: f64, window: (f64, f64)) -> f32 {
    ((hu.clamp(window.0, window.1) - window.0) / (window.1 - window.0)) as f32
}

fn source_position(i: usize, n_out: usize, n_in: usize) -> f64 {
    if n_out <= 1 || n_in <= 1 {
        0.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

/// Separable linear resize with corner-aligned grids.
pub fn resize_linear(data: &Array3<f64>, shape: [usize; 3]) -> Array3<f64> {
    let mut out = data.clone();
    for axis in 0..3 {
        let n_in = out.shape()[axis];
        if n_in == shape[axis] {
            continue;
        }
        let mut next_shape = [out.shape()[0], out.shape()[1], out.shape()[2]];
        next_shape[axis] = shape[axis];
        let src = &out;
        let next = Array3::from_shape_fn(next_shape, |idx| {
            let mut idx = [idx.0, idx.1, idx.2];
            let p = source_position(idx[axis], shape[axis], n_in);
            let i0 = (p.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let t = p - i0 as f64;
            idx[axis] = i0;
            let a = src[idx];
            idx[axis] = i1;
            let b = src[idx];
            a + t * (b - a)
        });
        out = next;
    }
    out
}

/// Nearest-neighbour resize with the grid mapping of [`resize_linear`].
pub fn resize_nearest(labels: &Array3<u16>, shape: [usize; 3]) -> Array3<u16> {
    let n_in = labels.shape().to_vec();
    Array3::from_shape_fn(shape, |(x, y, z)| {
        let pick = |i: usize, a: usize| (source_position(i, shape[a], n_in[a]).round() as usize).min(n_in[a] - 1);
        labels[[pick(x, 0), pick(y, 1), pick(z, 2)]]
    })
}

/// Argmax over a channel-first buffer `[channels, z, y, x]` (x fastest). Ties go
/// to the lower channel. Returns labels indexed `[x, y, z]`.
pub fn argmax_channels(data: &[f32], channels: usize, shape: [usize; 3]) -> Array3<u16> {
    let [nx, ny, nz] = shape;
    let plane = nx * ny * nz;
    assert_eq!(data.len(), channels * plane, "buffer does not match shape");
    Array3::from_shape_fn(shape, |(x, y, z)| {
        let off = (z * ny + y) * nx + x;
        let mut best = 0;
        for c in 1..channels {
            if data[c * plane + off] > data[best * plane + off] {
                best = c;
            }
        }
        best as u16
    })
}

#[cfg(not(feature = "onnx"))]
mod runtime {
    use super::*;
    use crate::segmentation::{ProviderKind, SegmentationProvider, SegmentationRequest};
    use crate::volume::SegmentationMask;

    const MSG: &str = "built without the `onnx` feature";

    pub(crate) struct OnnxProvider;

    impl OnnxProvider {
        pub(crate) fn load(_cfg: &ProviderConfig) -> Result<Self> {
            Err(SegError::RuntimeUnavailable(MSG.into()))
        }
    }

    impl SegmentationProvider for OnnxProvider {
        fn kind(&self) -> ProviderKind {
            ProviderKind::OnnxRuntime
        }

        fn segment(&self, _req: &SegmentationRequest<'_>) -> Result<SegmentationMask> {
            Err(SegError::RuntimeUnavailable(MSG.into()))
        }
    }

    pub(crate) fn probe(_model_path: Option<&Path>) -> Result<()> {
        Err(SegError::RuntimeUnavailable(MSG.into()))
    }
}

#[cfg(feature = "onnx")]
mod runtime {
    use super::*;
    use crate::segmentation::{check_labels, ModelManifest, ProviderKind, SegmentationProvider, SegmentationRequest};
    use crate::volume::SegmentationMask;
    use tract_onnx::prelude::*;

    type Plan = TypedRunnableModel<TypedModel>;

    pub(crate) struct OnnxProvider {
        manifest: ModelManifest,
        class_map: std::collections::BTreeMap<u16, String>,
        plan: Plan,
    }

    fn input_dims(m: &ModelManifest) -> Vec<usize> {
        let mut dims = vec![1, 1];
        dims.extend(m.input_size.iter().rev());
        dims
    }

    fn load_plan(model: &Path, manifest: &ModelManifest) -> Result<Plan> {
        let fail = |e: TractError| SegError::RuntimeUnavailable(format!("{}: {e}", model.display()));
        tract_onnx::onnx()
            .model_for_path(model)
            .and_then(|m| m.with_input_fact(0, f32::fact(input_dims(manifest)).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(fail)
    }

    impl OnnxProvider {
        pub(crate) fn load(cfg: &ProviderConfig) -> Result<Self> {
            let model = cfg.model_path.as_deref().expect("validated config");
            if !model.is_file() {
                return Err(SegError::RuntimeUnavailable(format!("model {} not found", model.display())));
            }
            let manifest = ModelManifest::load(&ModelManifest::path_for(model))?;
            let plan = load_plan(model, &manifest)?;
            let class_map = if cfg.class_map.is_empty() {
                manifest.class_map()
            } else {
                cfg.class_map.clone()
            };
            Ok(OnnxProvider {
                manifest,
                class_map,
                plan,
            })
        }
    }

    impl SegmentationProvider for OnnxProvider {
        fn kind(&self) -> ProviderKind {
            ProviderKind::OnnxRuntime
        }

        fn segment(&self, req: &SegmentationRequest<'_>) -> Result<SegmentationMask> {
            req.validate()?;
            if req.target != self.manifest.target {
                return Err(SegError::InvalidRequest("model target does not match request".into()));
            }
            let size = &self.manifest.input_size;
            let model_shape = [size[0], size[1], size.get(2).copied().unwrap_or(1)];
            let resized = resize_linear(&req.volume.voxels, model_shape);
            let data: Vec<f32> = resized
                .permuted_axes([2, 1, 0])
                .iter()
                .map(|&v| normalize_hu(v, self.manifest.hu_window))
                .collect();
            let input = Tensor::from_shape(&input_dims(&self.manifest), &data)
                .map_err(|e| SegError::Inference(e.to_string()))?;
            let out = self
                .plan
                .run(tvec!(input.into()))
                .map_err(|e| SegError::Inference(e.to_string()))?;
            let probs = out[0].as_slice::<f32>().map_err(|e| SegError::Inference(e.to_string()))?;
            let channels = self.manifest.channels.len();
            if probs.len() != channels * model_shape.iter().product::<usize>() {
                return Err(SegError::Inference("unexpected output size".into()));
            }
            let labels = argmax_channels(probs, channels, model_shape);
            let labels = resize_nearest(&labels, req.volume.shape());
            let mut mask = SegmentationMask::new(labels, self.class_map.clone(), req.volume.spacing);
            mask.origin = req.volume.origin;
            check_labels(&mask)?;
            Ok(mask)
        }
    }

    pub(crate) fn probe(model_path: Option<&Path>) -> Result<()> {
        let model = model_path.ok_or_else(|| SegError::RuntimeUnavailable("no model path given".into()))?;
        OnnxProvider::load(&ProviderConfig::onnx(model)).map(|_| ())
    }
}

pub(crate) use runtime::{probe, OnnxProvider};
