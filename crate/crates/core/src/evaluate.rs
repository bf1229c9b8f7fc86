//! Accuracy and confusion matrices at patch and image level.
//!
//! Matrices are stored predicted-major: `counts[predicted][actual]`, with
//! classes in [`ClassLabel::ALL`] order. Accuracies are kept as exact
//! integer ratios and only converted to floats for display.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::classify::ClassLabel;

/// Grid-sampling benchmark figures shown alongside a run: patch-wise
/// 4-class, image-wise 4-class and image-wise 2-class accuracy.
pub const BENCHMARK_PATCH_ACCURACY: f64 = 0.67;
pub const BENCHMARK_IMAGE_ACCURACY_4CLASS: f64 = 0.78;
pub const BENCHMARK_IMAGE_ACCURACY_2CLASS: f64 = 0.83;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("image {0:?} is not listed in the manifest")]
    UnknownImage(String),
}

/// Malignancy super-class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    NonCarcinoma,
    Carcinoma,
}

impl BinaryLabel {
    pub const ALL: [BinaryLabel; 2] = [BinaryLabel::NonCarcinoma, BinaryLabel::Carcinoma];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn display_name(self) -> &'static str {
        match self {
            BinaryLabel::NonCarcinoma => "Non-carcinoma",
            BinaryLabel::Carcinoma => "Carcinoma",
        }
    }
}

pub fn to_binary(label: ClassLabel) -> BinaryLabel {
    match label {
        ClassLabel::Normal | ClassLabel::Benign => BinaryLabel::NonCarcinoma,
        ClassLabel::InSitu | ClassLabel::Invasive => BinaryLabel::Carcinoma,
    }
}

/// `correct / total` kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
pub struct Ratio {
    pub correct: u64,
    pub total: u64,
}

impl Ratio {
    pub fn new(correct: u64, total: u64) -> Self {
        Self { correct, total }
    }

    /// `None` when nothing was counted.
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Ratio", 3)?;
        st.serialize_field("correct", &self.correct)?;
        st.serialize_field("total", &self.total)?;
        st.serialize_field("value", &self.value())?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[predicted][actual]`
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn get(&self, predicted: ClassLabel, actual: ClassLabel) -> u64 {
        self.counts[predicted.index()][actual.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..4).map(|i| self.counts[i][i]).sum()
    }

    pub fn diagonal(&self) -> [u64; 4] {
        std::array::from_fn(|i| self.counts[i][i])
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio::new(self.trace(), self.total())
    }

    /// Number of items whose true class is `actual`.
    pub fn column_total(&self, actual: ClassLabel) -> u64 {
        self.counts.iter().map(|row| row[actual.index()]).sum()
    }

    /// Correct / total among items of each true class.
    pub fn per_class_accuracy(&self) -> [Ratio; 4] {
        ClassLabel::ALL.map(|c| Ratio::new(self.get(c, c), self.column_total(c)))
    }

    /// Folds normal+benign and in situ+invasive together.
    pub fn collapse(&self) -> BinaryConfusion {
        let mut out = BinaryConfusion::default();
        for p in ClassLabel::ALL {
            for a in ClassLabel::ALL {
                out.counts[to_binary(p).index()][to_binary(a).index()] += self.get(p, a);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinaryConfusion {
    /// `counts[predicted][actual]`
    pub counts: [[u64; 2]; 2],
}

impl BinaryConfusion {
    pub fn get(&self, predicted: BinaryLabel, actual: BinaryLabel) -> u64 {
        self.counts[predicted.index()][actual.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio::new(self.counts[0][0] + self.counts[1][1], self.total())
    }
}

/// Tallies `(predicted, actual)` pairs.
pub fn build_confusion(pairs: &[(ClassLabel, ClassLabel)]) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for &(p, a) in pairs {
        m.counts[p.index()][a.index()] += 1;
    }
    m
}

pub fn build_binary_confusion(pairs: &[(BinaryLabel, BinaryLabel)]) -> BinaryConfusion {
    let mut m = BinaryConfusion::default();
    for &(p, a) in pairs {
        m.counts[p.index()][a.index()] += 1;
    }
    m
}

/// What the pipeline produced for one image, as needed for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub image_id: String,
    pub decision: ClassLabel,
    pub patch_labels: Vec<ClassLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: u64,
    pub n_patches: u64,
    pub patch_accuracy: Ratio,
    pub image_accuracy_4class: Ratio,
    pub image_accuracy_2class: Ratio,
    /// Indexed like [`ClassLabel::ALL`].
    pub per_class_accuracy: [Ratio; 4],
    pub cm4: ConfusionMatrix,
    pub cm2: BinaryConfusion,
}

/// Scores a run against ground truth. Every patch inherits its image's
/// label. Images whose ground truth is `None` are skipped.
pub fn evaluate_run(
    images: &[ScoredImage],
    truth: &HashMap<String, Option<ClassLabel>>,
) -> Result<EvalReport, EvalError> {
    let mut image_pairs = Vec::with_capacity(images.len());
    let mut patch_correct = 0u64;
    let mut patch_total = 0u64;
    for img in images {
        let actual = match truth.get(&img.image_id) {
            None => return Err(EvalError::UnknownImage(img.image_id.clone())),
            Some(None) => continue,
            Some(Some(a)) => *a,
        };
        image_pairs.push((img.decision, actual));
        patch_total += img.patch_labels.len() as u64;
        patch_correct += img.patch_labels.iter().filter(|&&l| l == actual).count() as u64;
    }
    let cm4 = build_confusion(&image_pairs);
    let binary_pairs: Vec<_> = image_pairs
        .iter()
        .map(|&(p, a)| (to_binary(p), to_binary(a)))
        .collect();
    let cm2 = build_binary_confusion(&binary_pairs);
    Ok(EvalReport {
        n_images: image_pairs.len() as u64,
        n_patches: patch_total,
        patch_accuracy: Ratio::new(patch_correct, patch_total),
        image_accuracy_4class: cm4.accuracy(),
        image_accuracy_2class: cm2.accuracy(),
        per_class_accuracy: cm4.per_class_accuracy(),
        cm4,
        cm2,
    })
}

/// Percentage with two significant figures: `0.85 -> "85%"`,
/// `0.0765 -> "7.7%"`, `1.0 -> "100%"`.
pub fn percent_2sf(fraction: f64) -> String {
    let pct = fraction * 100.0;
    if pct == 0.0 || !pct.is_finite() {
        return format!("{pct:.0}%");
    }
    let magnitude = pct.abs().log10().floor() as i32;
    let decimals = (1 - magnitude).max(0) as usize;
    let factor = 10f64.powi(1 - magnitude);
    let rounded = (pct * factor).round() / factor;
    format!("{rounded:.decimals$}%")
}

fn ratio_text(r: &Ratio) -> String {
    match r.value() {
        Some(v) => format!("{} ({}/{})", percent_2sf(v), r.correct, r.total),
        None => "n/a".to_string(),
    }
}

/// Human-readable rendering: four-class matrix, two-class matrix, and the
/// comparison against the grid-sampling benchmark.
pub fn render_tables(report: &EvalReport) -> String {
    let mut s = String::new();
    let w = 14;
    let _ = writeln!(
        s,
        "Four class confusion matrix (rows: predicted, columns: actual)"
    );
    let _ = write!(s, "{:w$}", "");
    for a in ClassLabel::ALL {
        let _ = write!(s, "{:>10}", a.display_name());
    }
    s.push('\n');
    for p in ClassLabel::ALL {
        let _ = write!(s, "{:w$}", p.display_name());
        for a in ClassLabel::ALL {
            let _ = write!(s, "{:>10}", report.cm4.get(p, a));
        }
        s.push('\n');
    }
    s.push('\n');

    let _ = writeln!(
        s,
        "Two class confusion matrix (rows: predicted, columns: actual)"
    );
    let _ = write!(s, "{:w$}", "");
    for a in BinaryLabel::ALL {
        let _ = write!(s, "{:>15}", a.display_name());
    }
    s.push('\n');
    for p in BinaryLabel::ALL {
        let _ = write!(s, "{:w$}", p.display_name());
        for a in BinaryLabel::ALL {
            let _ = write!(s, "{:>15}", report.cm2.get(p, a));
        }
        s.push('\n');
    }
    s.push('\n');

    let _ = writeln!(s, "Per-class image accuracy");
    for (c, r) in ClassLabel::ALL.iter().zip(&report.per_class_accuracy) {
        let _ = writeln!(s, "{:w$}{}", c.display_name(), ratio_text(r));
    }
    s.push('\n');

    let row = |s: &mut String, name: &str, ours: &Ratio, bench: f64| {
        let _ = writeln!(
            s,
            "{name:<32}{:<22}{}",
            ratio_text(ours),
            percent_2sf(bench)
        );
    };
    let _ = writeln!(
        s,
        "{:<32}{:<22}Grid-sampling benchmark",
        "Method", "This run"
    );
    let _ = writeln!(
        s,
        "{:<32}{:<22}Grid sampling",
        "Pre-processing", "Nuclei-based patches"
    );
    row(
        &mut s,
        "Patch-wise accuracy (4 class)",
        &report.patch_accuracy,
        BENCHMARK_PATCH_ACCURACY,
    );
    row(
        &mut s,
        "Image-wise accuracy (4 class)",
        &report.image_accuracy_4class,
        BENCHMARK_IMAGE_ACCURACY_4CLASS,
    );
    row(
        &mut s,
        "Image-wise accuracy (2 class)",
        &report.image_accuracy_2class,
        BENCHMARK_IMAGE_ACCURACY_2CLASS,
    );
    s
}
