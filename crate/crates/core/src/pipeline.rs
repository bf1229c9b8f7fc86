//! End-to-end orchestration behind the command-line subcommands.
//!
//! Work fans out per image on a bounded thread pool; results are always
//! written in manifest order so output files are byte-reproducible for a
//! fixed configuration.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::{majority_vote, AggregateError, ImageDecision, VoteCounts};
use crate::augment::{augment_patch, standard_specs, AugmentError, AugmentSpec, VARIANT_NAMES};
use crate::bluemask::compute_blue_mask;
use crate::classify::{
    classify_patch, ClassLabel, ClassProbabilities, ClassifyError, PatchClassifier, PatchPrediction,
};
use crate::config::{RunConfig, RunConfigError};
use crate::evaluate::{evaluate_run, render_tables, EvalError, EvalReport, ScoredImage};
use crate::manifest::{image_id, DatasetManifest, ManifestEntry, ManifestError, Split};
use crate::overlay::{render_overlay, OverlayError};
use crate::raster::{crop, decode_image_as, encode_mask_png, encode_png, RasterError, RgbRaster};
use crate::tiler::{select_patches, PatchSpec, SelectionReport, Tier, TilerError};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SELECTIONS_FILE: &str = "selections.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const GENERATION_FILE: &str = "generation.jsonl";
pub const OVERLAY_DIR: &str = "overlays";
pub const PATCH_DIR: &str = "patches";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: RasterError,
    },
    #[error(transparent)]
    Config(#[from] RunConfigError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Tiler(#[from] TilerError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path} line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Precondition(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).expect("records serialise");
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

/// Reads and decodes an image, honouring an explicit format when given.
pub fn load_image(
    path: &Path,
    format: Option<crate::raster::RasterFormat>,
) -> Result<RgbRaster, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_image_as(&bytes, format).map_err(|source| PipelineError::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn load_entry(entry: &ManifestEntry) -> Result<RgbRaster, PipelineError> {
    load_image(&entry.path, entry.format)
}

/// Mask, select, classify and vote for one decoded image.
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub selection: SelectionReport,
    pub predictions: Vec<PatchPrediction>,
    pub decision: ImageDecision,
}

pub fn process_image(
    raster: &RgbRaster,
    config: &RunConfig,
    backend: &dyn PatchClassifier,
) -> Result<ImageOutcome, PipelineError> {
    let mask = compute_blue_mask(raster, &config.mask);
    let selection = select_patches(raster, &mask, &config.mask, config.geometry())?;
    let predictions = classify_selected(raster, &selection.selected, backend)?;
    let labels: Vec<ClassLabel> = predictions.iter().map(|p| p.label).collect();
    let decision = majority_vote(&labels)?;
    Ok(ImageOutcome {
        selection,
        predictions,
        decision,
    })
}

fn classify_selected(
    raster: &RgbRaster,
    patches: &[PatchSpec],
    backend: &dyn PatchClassifier,
) -> Result<Vec<PatchPrediction>, PipelineError> {
    patches
        .iter()
        .map(|p| {
            let pixels = crop(raster, p.origin)?;
            let probs = classify_patch(backend, &pixels)?;
            Ok(PatchPrediction::new(*p, probs))
        })
        .collect()
}

/// One scored patch as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub x: u32,
    pub y: u32,
    pub size: u32,
    pub grid_row: u32,
    pub grid_col: u32,
    pub blue_density: f64,
    pub label: ClassLabel,
    pub probs: ClassProbabilities,
}

impl From<&PatchPrediction> for PatchRecord {
    fn from(p: &PatchPrediction) -> Self {
        Self {
            x: p.patch.origin.x,
            y: p.patch.origin.y,
            size: p.patch.origin.w,
            grid_row: p.patch.grid_index.0,
            grid_col: p.patch.grid_index.1,
            blue_density: p.patch.blue_density,
            label: p.label,
            probs: p.probs,
        }
    }
}

impl PatchRecord {
    pub fn spec(&self) -> PatchSpec {
        PatchSpec {
            origin: crate::raster::RegionRect::new(self.x, self.y, self.size, self.size),
            blue_density: self.blue_density,
            grid_index: (self.grid_row, self.grid_col),
        }
    }
}

/// Per-image line of `results.jsonl` for a successfully processed image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image_id: String,
    pub path: String,
    pub truth: Option<ClassLabel>,
    pub tier: Tier,
    pub image_blue_metric: f64,
    pub candidates_total: usize,
    pub candidates_qualified: usize,
    pub fallback: bool,
    pub n_patches: usize,
    pub vote_counts: VoteCounts,
    pub decision: ClassLabel,
    pub tie_broken: bool,
    pub patches: Vec<PatchRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ImageRecord {
    Ok(ImageResult),
    Failed {
        image_id: String,
        path: String,
        error: String,
    },
}

impl ImageRecord {
    pub fn image_id(&self) -> &str {
        match self {
            ImageRecord::Ok(r) => &r.image_id,
            ImageRecord::Failed { image_id, .. } => image_id,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ImageRecord::Ok(_))
    }
}

fn image_result(entry: &ManifestEntry, outcome: &ImageOutcome) -> ImageResult {
    let s = &outcome.selection;
    ImageResult {
        image_id: entry.id.clone(),
        path: entry.source.clone(),
        truth: entry.label,
        tier: s.tier,
        image_blue_metric: s.image_blue_metric,
        candidates_total: s.candidates_total,
        candidates_qualified: s.candidates_qualified,
        fallback: s.fallback,
        n_patches: outcome.decision.n_patches,
        vote_counts: outcome.decision.vote_counts,
        decision: outcome.decision.label,
        tie_broken: outcome.decision.tie_broken,
        patches: outcome.predictions.iter().map(PatchRecord::from).collect(),
    }
}

/// Re-scores the patch origins stored in `result` and votes again.
pub fn replay_decision(
    raster: &RgbRaster,
    result: &ImageResult,
    backend: &dyn PatchClassifier,
) -> Result<ImageDecision, PipelineError> {
    let specs: Vec<PatchSpec> = result.patches.iter().map(PatchRecord::spec).collect();
    let preds = classify_selected(raster, &specs, backend)?;
    let labels: Vec<ClassLabel> = preds.iter().map(|p| p.label).collect();
    Ok(majority_vote(&labels)?)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Precondition(format!("cannot start worker pool: {e}")))
}

/// What `infer` / `pipeline` produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<ImageRecord>,
    pub report: Option<EvalReport>,
    pub output_dir: PathBuf,
}

impl RunSummary {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }
}

/// Scores every manifest entry and writes `results.jsonl` (plus overlays
/// when enabled). With `evaluate` set and ground truth present, also
/// writes `eval.json` and `summary.txt`.
///
/// Per-image failures are recorded and do not stop the run; configuration
/// problems abort before any image is touched.
pub fn run_inference(
    manifest: &DatasetManifest,
    config: &RunConfig,
    evaluate: bool,
) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let backend: Arc<dyn PatchClassifier> = config.backend.build(config.patch_size)?;
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;

    let pool = thread_pool(config.workers)?;
    let records: Vec<ImageRecord> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let result = (|| {
                    let raster = load_entry(entry)?;
                    let outcome = process_image(&raster, config, backend.as_ref())?;
                    if config.write_overlays {
                        let labels: Vec<ClassLabel> =
                            outcome.predictions.iter().map(|p| p.label).collect();
                        let img = render_overlay(
                            &raster,
                            &outcome.selection,
                            Some(&labels),
                            &config.overlay,
                        )?;
                        let path = out.join(OVERLAY_DIR).join(format!("{}.png", entry.id));
                        write_file(&path, &encode_png(&img)?)?;
                    }
                    Ok::<_, PipelineError>(image_result(entry, &outcome))
                })();
                match result {
                    Ok(r) => ImageRecord::Ok(r),
                    Err(e) => {
                        log::warn!("{}: {e}", entry.source);
                        ImageRecord::Failed {
                            image_id: entry.id.clone(),
                            path: entry.source.clone(),
                            error: e.to_string(),
                        }
                    }
                }
            })
            .collect()
    });
    write_jsonl(&out.join(RESULTS_FILE), &records)?;

    let report = if evaluate && manifest.has_labels() {
        let report = evaluate_records(&records, manifest)?;
        write_eval(&out, &report, &records)?;
        Some(report)
    } else {
        None
    };
    Ok(RunSummary {
        records,
        report,
        output_dir: out,
    })
}

fn evaluate_records(
    records: &[ImageRecord],
    manifest: &DatasetManifest,
) -> Result<EvalReport, PipelineError> {
    let scored: Vec<ScoredImage> = records
        .iter()
        .filter_map(|r| match r {
            ImageRecord::Ok(res) => Some(ScoredImage {
                image_id: res.image_id.clone(),
                decision: res.decision,
                patch_labels: res.patches.iter().map(|p| p.label).collect(),
            }),
            ImageRecord::Failed { .. } => None,
        })
        .collect();
    Ok(evaluate_run(&scored, &manifest.truth())?)
}

fn write_eval(
    out: &Path,
    report: &EvalReport,
    records: &[ImageRecord],
) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(report).expect("report serialises");
    write_file(&out.join(EVAL_FILE), format!("{json}\n").as_bytes())?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    let mut text = format!(
        "images: {} ok, {} failed; evaluated {} images, {} patches\n\n",
        records.len() - failed,
        failed,
        report.n_images,
        report.n_patches
    );
    text.push_str(&render_tables(report));
    write_file(&out.join(SUMMARY_FILE), text.as_bytes())
}

/// Reads a `results.jsonl` file.
pub fn read_results(path: &Path) -> Result<Vec<ImageRecord>, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| PipelineError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Scores an earlier run's `results.jsonl` against `manifest` and writes
/// `eval.json` and `summary.txt` into `out`.
pub fn run_evaluate(
    results: &Path,
    manifest: &DatasetManifest,
    out: &Path,
) -> Result<EvalReport, PipelineError> {
    let records = read_results(results)?;
    let report = evaluate_records(&records, manifest)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_eval(out, &report, &records)?;
    Ok(report)
}

/// Line of `selections.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SelectionRecord {
    Ok {
        image_id: String,
        path: String,
        #[serde(flatten)]
        report: SelectionReport,
    },
    Failed {
        image_id: String,
        path: String,
        error: String,
    },
}

/// Runs masking and patch selection only, writing `selections.jsonl` and,
/// with `save_patches`, each selected patch as `patches/<id>_<x>_<y>.png`.
pub fn run_extract(
    manifest: &DatasetManifest,
    config: &RunConfig,
    save_patches: bool,
) -> Result<Vec<SelectionRecord>, PipelineError> {
    config.validate()?;
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let pool = thread_pool(config.workers)?;
    let records: Vec<SelectionRecord> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let result = (|| {
                    let raster = load_entry(entry)?;
                    let mask = compute_blue_mask(&raster, &config.mask);
                    let report = select_patches(&raster, &mask, &config.mask, config.geometry())?;
                    if save_patches {
                        for p in &report.selected {
                            let name = format!("{}_{}_{}.png", entry.id, p.origin.x, p.origin.y);
                            write_file(
                                &out.join(PATCH_DIR).join(name),
                                &encode_png(&crop(&raster, p.origin)?)?,
                            )?;
                        }
                    }
                    Ok::<_, PipelineError>(report)
                })();
                match result {
                    Ok(report) => SelectionRecord::Ok {
                        image_id: entry.id.clone(),
                        path: entry.source.clone(),
                        report,
                    },
                    Err(e) => SelectionRecord::Failed {
                        image_id: entry.id.clone(),
                        path: entry.source.clone(),
                        error: e.to_string(),
                    },
                }
            })
            .collect()
    });
    write_jsonl(&out.join(SELECTIONS_FILE), &records)?;
    Ok(records)
}

/// Files written by [`run_mask`].
#[derive(Debug, Clone)]
pub struct MaskOutput {
    pub report: SelectionReport,
    pub mask_path: PathBuf,
    pub overlay_path: PathBuf,
}

/// Writes `<id>_mask.png` (bluish pixels white) and `<id>_overlay.png`
/// (accepted patches outlined in the accepted colour, rejected ones in the
/// rejected colour) for a single image.
pub fn run_mask(image: &Path, config: &RunConfig, out: &Path) -> Result<MaskOutput, PipelineError> {
    config.validate()?;
    let raster = load_image(image, None)?;
    let mask = compute_blue_mask(&raster, &config.mask);
    let report = select_patches(&raster, &mask, &config.mask, config.geometry())?;
    let id = image_id(&image.file_name().map_or_else(
        || image.to_string_lossy().into_owned(),
        |n| n.to_string_lossy().into_owned(),
    ));
    let mask_path = out.join(format!("{id}_mask.png"));
    let overlay_path = out.join(format!("{id}_overlay.png"));
    write_file(&mask_path, &encode_mask_png(&mask)?)?;
    let overlay = render_overlay(&raster, &report, None, &config.overlay)?;
    write_file(&overlay_path, &encode_png(&overlay)?)?;
    Ok(MaskOutput {
        report,
        mask_path,
        overlay_path,
    })
}

/// Line of `generation.jsonl` describing one exported training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedPatch {
    /// Relative to the export directory.
    pub file: String,
    pub label: ClassLabel,
    pub source: String,
    pub image_id: String,
    pub x: u32,
    pub y: u32,
    pub variant: String,
    pub seed: u64,
    pub augmentation: AugmentSpec,
}

/// Seed for one patch's augmentations, derived from the run seed and the
/// patch identity so it does not depend on processing order.
pub fn patch_seed(run_seed: u64, image_id: &str, x: u32, y: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(image_id.as_bytes());
    h.update([0]);
    h.update(x.to_le_bytes());
    h.update(y.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Writes every selected patch of the training split, plus its eight
/// standard augmentations, as `<class>/<id>_<x>_<y>_<variant>.png`, and a
/// `generation.jsonl` index. Aborts if any training entry is unlabelled.
pub fn run_export_training(
    manifest: &DatasetManifest,
    config: &RunConfig,
) -> Result<Vec<GeneratedPatch>, PipelineError> {
    config.validate()?;
    let train: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .collect();
    if train.is_empty() {
        return Err(PipelineError::Precondition(
            "manifest has no training entries to export".into(),
        ));
    }
    let unlabelled: Vec<&str> = train
        .iter()
        .filter(|e| e.label.is_none())
        .map(|e| e.source.as_str())
        .collect();
    if !unlabelled.is_empty() {
        return Err(PipelineError::Precondition(format!(
            "training export needs a class label for every entry; unlabelled: {}",
            unlabelled.join(", ")
        )));
    }
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let pool = thread_pool(config.workers)?;
    let per_image: Vec<Vec<GeneratedPatch>> = pool.install(|| {
        train
            .par_iter()
            .map(|entry| export_entry(entry, config, &out))
            .collect::<Result<_, _>>()
    })?;
    let generated: Vec<GeneratedPatch> = per_image.into_iter().flatten().collect();
    write_jsonl(&out.join(GENERATION_FILE), &generated)?;
    Ok(generated)
}

fn export_entry(
    entry: &ManifestEntry,
    config: &RunConfig,
    out: &Path,
) -> Result<Vec<GeneratedPatch>, PipelineError> {
    let label = entry.label.expect("checked by caller");
    let raster = load_entry(entry)?;
    let mask = compute_blue_mask(&raster, &config.mask);
    let report = select_patches(&raster, &mask, &config.mask, config.geometry())?;
    let mut written = Vec::new();
    for p in &report.selected {
        let patch = crop(&raster, p.origin)?;
        let (x, y) = (p.origin.x, p.origin.y);
        let seed = patch_seed(config.seed, &entry.id, x, y);
        for (spec, variant) in standard_specs(patch.width(), seed)
            .iter()
            .zip(VARIANT_NAMES)
        {
            let img = augment_patch(&patch, spec)?;
            let file = format!("{}/{}_{x}_{y}_{variant}.png", label.as_str(), entry.id);
            write_file(&out.join(&file), &encode_png(&img)?)?;
            written.push(GeneratedPatch {
                file,
                label,
                source: entry.source.clone(),
                image_id: entry.id.clone(),
                x,
                y,
                variant: variant.to_string(),
                seed,
                augmentation: *spec,
            });
        }
    }
    Ok(written)
}
