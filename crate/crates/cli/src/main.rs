use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use nucleivote::config::{BackendConfig, RunConfig, CONFIG_ENV_VAR};
use nucleivote::evaluate::render_tables;
use nucleivote::manifest::DatasetManifest;
use nucleivote::pipeline::{self, ImageRecord, SelectionRecord};

#[derive(Parser, Debug)]
#[command(
    name = "nucleivote",
    version,
    about = "Nuclei-density patch selection and majority-vote classification of H&E slides"
)]
struct Cli {
    /// TOML run configuration; unset fields take their defaults.
    #[arg(long, short, global = true, env = CONFIG_ENV_VAR)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunOpts {
    /// Output directory (overrides the config).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Seed for augmentation (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of images processed concurrently (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
    /// Patch classifier: digest[:SALT], constant:P0,P1,P2,P3, onnx:PATH or PATH.onnx
    #[arg(long)]
    backend: Option<BackendConfig>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the bluish mask and a patch overlay for one image.
    Mask {
        image: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Select patches for every manifest entry and write selections.jsonl.
    Extract {
        #[arg(long, short)]
        manifest: PathBuf,
        /// Also write each selected patch as a PNG.
        #[arg(long)]
        save_patches: bool,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Write selected patches and their augmentations as a class-labelled training set.
    ExportTraining {
        #[arg(long, short)]
        manifest: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Classify every manifest entry and write results.jsonl.
    Infer {
        #[arg(long, short)]
        manifest: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Score an earlier results.jsonl against the manifest labels.
    Evaluate {
        #[arg(long, short)]
        manifest: PathBuf,
        #[arg(long, short)]
        results: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Infer, then evaluate when the manifest has labels.
    Pipeline {
        #[arg(long, short)]
        manifest: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        opts: RunOpts,
    },
}

fn load_config(path: Option<&Path>, opts: &RunOpts) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(w) = opts.workers {
        cfg.workers = w;
    }
    if let Some(b) = &opts.backend {
        cfg.backend = b.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn report_records(records: &[ImageRecord]) -> usize {
    let mut failed = 0;
    for r in records {
        match r {
            ImageRecord::Ok(res) => info!(
                "{}: {} ({} patches, tier {})",
                res.image_id, res.decision, res.n_patches, res.tier
            ),
            ImageRecord::Failed { path, error, .. } => {
                failed += 1;
                eprintln!("failed: {path}: {error}");
            }
        }
    }
    failed
}

fn run(cli: Cli) -> Result<bool> {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Mask { image, opts } => {
            let cfg = load_config(cfg_path, &opts)?;
            let out = pipeline::run_mask(&image, &cfg, &cfg.output_dir)
                .with_context(|| format!("masking {}", image.display()))?;
            println!(
                "tier {} metric {:.5} selected {}/{}{}",
                out.report.tier,
                out.report.image_blue_metric,
                out.report.selected.len(),
                out.report.candidates_total,
                if out.report.fallback {
                    " (fallback)"
                } else {
                    ""
                }
            );
            println!("{}", out.mask_path.display());
            println!("{}", out.overlay_path.display());
            Ok(true)
        }
        Command::Extract {
            manifest,
            save_patches,
            opts,
        } => {
            let cfg = load_config(cfg_path, &opts)?;
            let records = pipeline::run_extract(&load_manifest(&manifest)?, &cfg, save_patches)?;
            let mut failed = 0;
            for r in &records {
                if let SelectionRecord::Failed { path, error, .. } = r {
                    failed += 1;
                    eprintln!("failed: {path}: {error}");
                }
            }
            println!("{} images, {} failed", records.len(), failed);
            Ok(failed == 0)
        }
        Command::ExportTraining { manifest, opts } => {
            let cfg = load_config(cfg_path, &opts)?;
            let files = pipeline::run_export_training(&load_manifest(&manifest)?, &cfg)?;
            println!(
                "wrote {} training patches to {}",
                files.len(),
                cfg.output_dir.display()
            );
            Ok(true)
        }
        Command::Infer { manifest, opts } => {
            let cfg = load_config(cfg_path, &opts)?;
            let summary = pipeline::run_inference(&load_manifest(&manifest)?, &cfg, false)?;
            let failed = report_records(&summary.records);
            println!("{} images, {} failed", summary.records.len(), failed);
            Ok(failed == 0)
        }
        Command::Evaluate {
            manifest,
            results,
            opts,
        } => {
            let cfg = load_config(cfg_path, &opts)?;
            let report =
                pipeline::run_evaluate(&results, &load_manifest(&manifest)?, &cfg.output_dir)?;
            print!("{}", render_tables(&report));
            Ok(true)
        }
        Command::Pipeline { manifest, opts } => {
            let cfg = load_config(cfg_path, &opts)?;
            let summary = pipeline::run_inference(&load_manifest(&manifest)?, &cfg, true)?;
            let failed = report_records(&summary.records);
            if let Some(report) = &summary.report {
                print!("{}", render_tables(report));
            }
            println!("{} images, {} failed", summary.records.len(), failed);
            Ok(failed == 0)
        }
        Command::Config { opts } => {
            print!("{}", load_config(cfg_path, &opts)?.to_toml());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
