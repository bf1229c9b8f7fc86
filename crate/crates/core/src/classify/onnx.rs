use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::{ClassLabel, ClassProbabilities, ClassifyError, PatchClassifier};
use crate::raster::RgbRaster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorLayout {
    /// batch, channel, height, width
    Nchw,
    /// batch, height, width, channel
    Nhwc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Preprocessing and output conventions written next to an exported model.
///
/// Each input channel value `v` in `0..=255` is fed as `v * scale[c] + offset[c]`,
/// where `c` indexes the channel in `channel_order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    pub input_size: u32,
    pub layout: TensorLayout,
    pub channel_order: ChannelOrder,
    pub scale: [f32; 3],
    pub offset: [f32; 3],
    /// Class name of each model output index.
    pub class_order: Vec<ClassLabel>,
}

impl ModelMetadata {
    /// `x / 127.5 - 1`, the Keras Inception-v3 input convention.
    pub fn inception_v3() -> Self {
        Self {
            input_size: 299,
            layout: TensorLayout::Nhwc,
            channel_order: ChannelOrder::Rgb,
            scale: [1.0 / 127.5; 3],
            offset: [-1.0; 3],
            class_order: ClassLabel::ALL.to_vec(),
        }
    }

    /// Sidecar location used when none is given: `<model>.json`.
    pub fn default_path(model: &Path) -> PathBuf {
        model.with_extension("json")
    }

    pub fn load(path: &Path) -> Result<Self, ClassifyError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ClassifyError::BackendLoad(format!("{}: {e}", path.display())))?;
        let meta: Self = serde_json::from_str(&text)
            .map_err(|e| ClassifyError::BackendLoad(format!("{}: {e}", path.display())))?;
        meta.validate()?;
        Ok(meta)
    }

    fn validate(&self) -> Result<(), ClassifyError> {
        let mut seen = self.class_order.clone();
        seen.sort();
        if seen != ClassLabel::ALL {
            return Err(ClassifyError::BackendLoad(format!(
                "class_order must list each of the four classes once, got {:?}",
                self.class_order
            )));
        }
        if self.input_size == 0 {
            return Err(ClassifyError::BackendLoad(
                "input_size must be positive".into(),
            ));
        }
        Ok(())
    }

    fn input_shape(&self) -> [usize; 4] {
        let n = self.input_size as usize;
        match self.layout {
            TensorLayout::Nchw => [1, 3, n, n],
            TensorLayout::Nhwc => [1, n, n, 3],
        }
    }

    /// Preprocessed input tensor for one patch.
    pub fn to_input(&self, patch: &RgbRaster) -> tract_ndarray::Array4<f32> {
        let n = self.input_size as usize;
        let px = patch.pixels();
        let channel = |p: [u8; 3], c: usize| -> f32 {
            let src = match self.channel_order {
                ChannelOrder::Rgb => c,
                ChannelOrder::Bgr => 2 - c,
            };
            f32::from(p[src]) * self.scale[c] + self.offset[c]
        };
        match self.layout {
            TensorLayout::Nchw => {
                tract_ndarray::Array4::from_shape_fn((1, 3, n, n), |(_, c, y, x)| {
                    channel(px[y * n + x], c)
                })
            }
            TensorLayout::Nhwc => {
                tract_ndarray::Array4::from_shape_fn((1, n, n, 3), |(_, y, x, c)| {
                    channel(px[y * n + x], c)
                })
            }
        }
    }
}

/// Runs an ONNX network exported by the training side.
#[derive(Clone)]
pub struct OnnxBackend {
    plan: Arc<TypedRunnableModel>,
    meta: ModelMetadata,
    source: PathBuf,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend")
            .field("source", &self.source)
            .field("meta", &self.meta)
            .finish()
    }
}

impl OnnxBackend {
    /// Loads `model` and its sidecar metadata (default `<model>.json`).
    pub fn load(model: &Path, metadata: Option<&Path>) -> Result<Self, ClassifyError> {
        let meta_path = metadata
            .map(Path::to_path_buf)
            .unwrap_or_else(|| ModelMetadata::default_path(model));
        let meta = ModelMetadata::load(&meta_path)?;
        if !model.is_file() {
            return Err(ClassifyError::BackendLoad(format!(
                "model file {} not found",
                model.display()
            )));
        }
        let load_err =
            |e: TractError| ClassifyError::BackendLoad(format!("{}: {e:#}", model.display()));
        let plan = tract_onnx::onnx()
            .model_for_path(model)
            .map_err(load_err)?
            .with_input_fact(0, f32::fact(meta.input_shape()).into())
            .map_err(load_err)?
            .into_optimized()
            .map_err(load_err)?
            .into_runnable()
            .map_err(load_err)?;
        Ok(Self {
            plan,
            meta,
            source: model.to_path_buf(),
        })
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.meta
    }
}

impl PatchClassifier for OnnxBackend {
    fn input_size(&self) -> u32 {
        self.meta.input_size
    }

    fn predict(&self, patch: &RgbRaster) -> Result<ClassProbabilities, ClassifyError> {
        let input: Tensor = self.meta.to_input(patch).into();
        let outputs = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| ClassifyError::Inference(format!("{e:#}")))?;
        let first = outputs
            .first()
            .ok_or_else(|| ClassifyError::ModelContract("model produced no outputs".into()))?;
        let view = first
            .to_plain_array_view::<f32>()
            .map_err(|e| ClassifyError::ModelContract(format!("output is not f32: {e}")))?;
        let values: Vec<f32> = view.iter().copied().collect();
        if values.len() != 4 {
            return Err(ClassifyError::ModelContract(format!(
                "expected 4 outputs, model produced {} (shape {:?})",
                values.len(),
                view.shape()
            )));
        }
        let mut probs = [0.0f64; 4];
        for (i, label) in self.meta.class_order.iter().enumerate() {
            probs[label.index()] = f64::from(values[i]);
        }
        ClassProbabilities::new(probs)
    }

    fn describe(&self) -> String {
        format!("onnx({})", self.source.display())
    }
}
