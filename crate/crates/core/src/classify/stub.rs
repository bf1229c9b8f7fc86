use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClassProbabilities, ClassifyError, PatchClassifier};
use crate::raster::RgbRaster;

/// How the stub produces its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StubMode {
    /// Same vector for every patch.
    Constant { probs: [f64; 4] },
    /// Scores drawn from a SHA-256 digest of the salted patch bytes.
    Digest { salt: u64 },
}

/// Model-free backend whose output depends only on the patch pixels and
/// its own configuration.
#[derive(Debug, Clone)]
pub struct StubBackend {
    mode: StubMode,
    constant: Option<ClassProbabilities>,
    input_size: u32,
}

impl StubBackend {
    pub fn new(mode: StubMode, input_size: u32) -> Result<Self, ClassifyError> {
        let constant = match &mode {
            StubMode::Constant { probs } => Some(ClassProbabilities::new(*probs)?),
            StubMode::Digest { .. } => None,
        };
        Ok(Self {
            mode,
            constant,
            input_size,
        })
    }

    pub fn constant(probs: [f64; 4], input_size: u32) -> Result<Self, ClassifyError> {
        Self::new(StubMode::Constant { probs }, input_size)
    }

    pub fn digest(salt: u64, input_size: u32) -> Self {
        Self::new(StubMode::Digest { salt }, input_size).expect("digest mode is always valid")
    }

    pub fn mode(&self) -> &StubMode {
        &self.mode
    }

    fn digest_scores(salt: u64, patch: &RgbRaster) -> ClassProbabilities {
        let mut h = Sha256::new();
        h.update(salt.to_le_bytes());
        h.update(patch.width().to_le_bytes());
        h.update(patch.height().to_le_bytes());
        for px in patch.pixels() {
            h.update(px);
        }
        let d = h.finalize();
        let raw: [f64; 4] =
            std::array::from_fn(|i| f64::from(u16::from_le_bytes([d[2 * i], d[2 * i + 1]])) + 1.0);
        let total: f64 = raw.iter().sum();
        ClassProbabilities::new(raw.map(|v| v / total)).expect("normalised by construction")
    }
}

impl PatchClassifier for StubBackend {
    fn input_size(&self) -> u32 {
        self.input_size
    }

    fn predict(&self, patch: &RgbRaster) -> Result<ClassProbabilities, ClassifyError> {
        Ok(match (&self.mode, self.constant) {
            (_, Some(p)) => p,
            (StubMode::Digest { salt }, None) => Self::digest_scores(*salt, patch),
            (StubMode::Constant { .. }, None) => unreachable!("constant validated in new"),
        })
    }

    fn describe(&self) -> String {
        match &self.mode {
            StubMode::Constant { probs } => format!("stub(constant {probs:?})"),
            StubMode::Digest { salt } => format!("stub(digest salt={salt})"),
        }
    }
}
