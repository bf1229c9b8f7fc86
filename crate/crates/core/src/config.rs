//! Run configuration: every threshold and size in one TOML-serialisable
//! record, with the published values as defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bluemask::MaskConfig;
use crate::classify::{ClassifyError, PatchClassifier, StubBackend, StubMode};
use crate::overlay::OverlayStyle;
use crate::tiler::{PatchGeometry, DEFAULT_PATCH_SIZE, DEFAULT_STRIDE};

/// Environment variable naming the config file used when none is passed.
pub const CONFIG_ENV_VAR: &str = "NUCLEIVOTE_CONFIG";

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(
        "invalid backend spec {0:?}: expected digest[:SALT], constant:P0,P1,P2,P3 or onnx:PATH"
    )]
    BackendSpec(String),
}

/// Which patch classifier to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Model-free scores derived from a digest of the patch bytes.
    Digest { salt: u64 },
    /// The same probability vector for every patch.
    Constant { probs: [f64; 4] },
    /// Exported network plus sidecar metadata (default `<model>.json`).
    Onnx {
        model: PathBuf,
        #[serde(default)]
        metadata: Option<PathBuf>,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Digest { salt: 0 }
    }
}

impl FromStr for BackendConfig {
    type Err = RunConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RunConfigError::BackendSpec(s.to_string());
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "digest" | "stub" => {
                let salt = if arg.is_empty() {
                    0
                } else {
                    arg.parse().map_err(|_| bad())?
                };
                Ok(BackendConfig::Digest { salt })
            }
            "constant" => {
                let vals: Vec<f64> = arg
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?;
                let probs: [f64; 4] = vals.try_into().map_err(|_| bad())?;
                Ok(BackendConfig::Constant { probs })
            }
            "onnx" if !arg.is_empty() => Ok(BackendConfig::Onnx {
                model: PathBuf::from(arg),
                metadata: None,
            }),
            _ if s.ends_with(".onnx") => Ok(BackendConfig::Onnx {
                model: PathBuf::from(s),
                metadata: None,
            }),
            _ => Err(bad()),
        }
    }
}

impl BackendConfig {
    /// Instantiates the backend for `patch_size`-pixel patches.
    pub fn build(&self, patch_size: u32) -> Result<Arc<dyn PatchClassifier>, ClassifyError> {
        match self {
            BackendConfig::Digest { salt } => Ok(Arc::new(StubBackend::digest(*salt, patch_size))),
            BackendConfig::Constant { probs } => Ok(Arc::new(StubBackend::new(
                StubMode::Constant { probs: *probs },
                patch_size,
            )?)),
            #[cfg(feature = "onnx")]
            BackendConfig::Onnx { model, metadata } => {
                let backend = crate::classify::OnnxBackend::load(model, metadata.as_deref())?;
                if backend.input_size() != patch_size {
                    return Err(ClassifyError::BackendLoad(format!(
                        "model expects {0}x{0} patches but patch_size is {patch_size}",
                        backend.input_size()
                    )));
                }
                Ok(Arc::new(backend))
            }
            #[cfg(not(feature = "onnx"))]
            BackendConfig::Onnx { .. } => Err(ClassifyError::BackendLoad(
                "built without the `onnx` feature".into(),
            )),
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub patch_size: u32,
    pub stride: u32,
    pub seed: u64,
    /// Images processed concurrently.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Write an overlay PNG per image during inference.
    pub write_overlays: bool,
    pub mask: MaskConfig,
    pub backend: BackendConfig,
    pub overlay: OverlayStyle,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_STRIDE,
            seed: 0,
            workers: default_workers(),
            output_dir: PathBuf::from("out"),
            write_overlays: true,
            mask: MaskConfig::default(),
            backend: BackendConfig::default(),
            overlay: OverlayStyle::default(),
        }
    }
}

impl RunConfig {
    pub fn geometry(&self) -> PatchGeometry {
        PatchGeometry {
            patch_size: self.patch_size,
            stride: self.stride,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, RunConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| RunConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            RunConfigError::Invalid(m) => {
                RunConfigError::Invalid(format!("{}: {m}", path.display()))
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<(), RunConfigError> {
        let invalid = |e: &dyn std::fmt::Display| RunConfigError::Invalid(e.to_string());
        self.mask.validate().map_err(|e| invalid(&e))?;
        self.geometry().validate().map_err(|e| invalid(&e))?;
        self.overlay.validate().map_err(|e| invalid(&e))?;
        if self.workers == 0 {
            return Err(RunConfigError::Invalid("workers must be at least 1".into()));
        }
        if let BackendConfig::Constant { probs } = &self.backend {
            crate::classify::ClassProbabilities::new(*probs).map_err(|e| invalid(&e))?;
        }
        Ok(())
    }
}
