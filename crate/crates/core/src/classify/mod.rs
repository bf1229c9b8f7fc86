//! Patch-level four-class scoring.
//!
//! A backend takes one square RGB patch and returns a probability vector
//! over [`ClassLabel`]. Two backends ship here: [`StubBackend`], which is a
//! pure function of the patch bytes and needs no model artifacts, and
//! (behind the `onnx` feature) [`OnnxBackend`], which runs an exported
//! network together with its preprocessing sidecar.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RgbRaster;
use crate::tiler::PatchSpec;

mod stub;
pub use stub::{StubBackend, StubMode};

#[cfg(feature = "onnx")]
mod onnx;
#[cfg(feature = "onnx")]
pub use onnx::{ChannelOrder, ModelMetadata, OnnxBackend, TensorLayout};

/// Largest accepted deviation of a probability vector's sum from 1.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("patch is {width}x{height}, backend expects {expected}x{expected}")]
    Shape {
        width: u32,
        height: u32,
        expected: u32,
    },
    #[error("failed to load model backend: {0}")]
    BackendLoad(String),
    #[error("model contract violated: {0}")]
    ModelContract(String),
    #[error("inference failed: {0}")]
    Inference(String),
}

/// The four diagnostic classes, in softmax index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Normal,
    Benign,
    InSitu,
    Invasive,
}

impl ClassLabel {
    /// Index order: Normal, Benign, InSitu, Invasive.
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Normal,
        ClassLabel::Benign,
        ClassLabel::InSitu,
        ClassLabel::Invasive,
    ];

    /// Most dangerous first; used to break every tie.
    pub const BY_PRECEDENCE: [ClassLabel; 4] = [
        ClassLabel::Invasive,
        ClassLabel::InSitu,
        ClassLabel::Benign,
        ClassLabel::Normal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// 0 is the highest precedence (Invasive), 3 the lowest (Normal).
    pub fn precedence(self) -> u8 {
        match self {
            ClassLabel::Invasive => 0,
            ClassLabel::InSitu => 1,
            ClassLabel::Benign => 2,
            ClassLabel::Normal => 3,
        }
    }

    /// True when `self` wins a tie against `other`.
    pub fn outranks(self, other: ClassLabel) -> bool {
        self.precedence() < other.precedence()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Normal => "normal",
            ClassLabel::Benign => "benign",
            ClassLabel::InSitu => "in_situ",
            ClassLabel::Invasive => "invasive",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ClassLabel::Normal => "Normal",
            ClassLabel::Benign => "Benign",
            ClassLabel::InSitu => "In situ",
            ClassLabel::Invasive => "Invasive",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .collect();
        match norm.as_str() {
            "normal" => Ok(ClassLabel::Normal),
            "benign" => Ok(ClassLabel::Benign),
            "insitu" => Ok(ClassLabel::InSitu),
            "invasive" => Ok(ClassLabel::Invasive),
            _ => Err(format!("unknown class label {s:?}")),
        }
    }
}

/// Probability vector indexed by [`ClassLabel::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct ClassProbabilities([f64; 4]);

impl ClassProbabilities {
    /// Accepts non-negative vectors whose sum is within
    /// [`PROBABILITY_SUM_TOLERANCE`] of one, rescaling them to sum to one.
    pub fn new(p: [f64; 4]) -> Result<Self, ClassifyError> {
        let sum = Self::check(&p)?;
        if sum == 1.0 {
            return Ok(Self(p));
        }
        Ok(Self(p.map(|v| v / sum)))
    }

    fn check(p: &[f64; 4]) -> Result<f64, ClassifyError> {
        if let Some(bad) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(ClassifyError::ModelContract(format!(
                "probability {bad} is negative or not finite in {p:?}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(ClassifyError::ModelContract(format!(
                "probabilities sum to {sum}, not 1 (tolerance {PROBABILITY_SUM_TOLERANCE})"
            )));
        }
        Ok(sum)
    }

    pub fn uniform() -> Self {
        Self([0.25; 4])
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        self.0[label.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }

    pub fn argmax(&self) -> ClassLabel {
        argmax_label(&self.0)
    }
}

impl TryFrom<[f64; 4]> for ClassProbabilities {
    type Error = ClassifyError;

    /// Validates without rescaling, so stored vectors read back unchanged.
    fn try_from(p: [f64; 4]) -> Result<Self, Self::Error> {
        Self::check(&p)?;
        Ok(Self(p))
    }
}

impl From<ClassProbabilities> for [f64; 4] {
    fn from(p: ClassProbabilities) -> Self {
        p.0
    }
}

/// Label of the largest score. Exact ties go to the most dangerous class.
pub fn argmax_label(scores: &[f64; 4]) -> ClassLabel {
    let mut best = ClassLabel::BY_PRECEDENCE[0];
    for &label in &ClassLabel::BY_PRECEDENCE[1..] {
        // strictly greater: an equal score never displaces a higher-precedence label
        if scores[label.index()] > scores[best.index()] {
            best = label;
        }
    }
    best
}

/// One classified patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPrediction {
    pub patch: PatchSpec,
    pub probs: ClassProbabilities,
    pub label: ClassLabel,
}

impl PatchPrediction {
    pub fn new(patch: PatchSpec, probs: ClassProbabilities) -> Self {
        Self {
            patch,
            label: probs.argmax(),
            probs,
        }
    }
}

/// A patch scorer. Implementations must be safe to call from several
/// threads at once and give the same answer as sequential calls.
pub trait PatchClassifier: Send + Sync {
    /// Edge length of the square patches the backend accepts.
    fn input_size(&self) -> u32;

    /// Scores a patch already known to have the right shape.
    fn predict(&self, patch: &RgbRaster) -> Result<ClassProbabilities, ClassifyError>;

    fn describe(&self) -> String;
}

/// Shape-checked entry point for scoring a patch.
pub fn classify_patch(
    backend: &dyn PatchClassifier,
    patch: &RgbRaster,
) -> Result<ClassProbabilities, ClassifyError> {
    let expected = backend.input_size();
    if patch.width() != expected || patch.height() != expected {
        return Err(ClassifyError::Shape {
            width: patch.width(),
            height: patch.height(),
            expected,
        });
    }
    backend.predict(patch)
}
