use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use nucleivote::config::{BackendConfig, RunConfig};
use nucleivote::manifest::DatasetManifest;
use nucleivote::pipeline::{
    self, load_image, read_results, replay_decision, run_evaluate, run_export_training,
    run_extract, run_inference, run_mask, GeneratedPatch, ImageRecord, SelectionRecord,
};
use nucleivote::raster::encode_png;
use nucleivote::synthetic::{synthetic_slide, SlideSpec};
use nucleivote::ClassLabel;

const LABELS: [&str; 4] = ["normal", "benign", "in_situ", "invasive"];

fn write_slides(dir: &Path, n: u64, split: &str) -> String {
    let mut text = String::from("# synthetic slides\npath,label,split\n");
    for i in 0..n {
        let slide = synthetic_slide(&SlideSpec::new(620, 470, 40 + i));
        let name = format!("s{i}.png");
        fs::write(dir.join(&name), encode_png(&slide).unwrap()).unwrap();
        text.push_str(&format!("{name},{},{split}\n", LABELS[i as usize % 4]));
    }
    text
}

fn config(out: &Path) -> RunConfig {
    RunConfig {
        seed: 21,
        workers: 2,
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn hashes(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(fs::read(&p).unwrap());
                out.insert(rel, format!("{digest:x}"));
            }
        }
    }
    out
}

#[test]
fn inference_writes_records_overlays_and_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest =
        DatasetManifest::parse(&write_slides(tmp.path(), 4, "validation"), tmp.path()).unwrap();
    let out = tmp.path().join("out");
    let summary = run_inference(&manifest, &config(&out), true).unwrap();
    assert_eq!(summary.failed(), 0);
    let report = summary.report.expect("labelled manifest is evaluated");
    assert_eq!(report.n_images, 4);

    let on_disk = read_results(&out.join(pipeline::RESULTS_FILE)).unwrap();
    assert_eq!(on_disk, summary.records);
    let ids: Vec<&str> = on_disk.iter().map(|r| r.image_id()).collect();
    let expected: Vec<&str> = manifest.entries.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, expected, "records keep manifest order");
    for r in &on_disk {
        let ImageRecord::Ok(res) = r else {
            panic!("{r:?}")
        };
        assert_eq!(res.n_patches, res.patches.len());
        assert_eq!(res.vote_counts.total(), res.n_patches);
        assert!(out
            .join(pipeline::OVERLAY_DIR)
            .join(format!("{}.png", res.image_id))
            .is_file());
    }
    assert!(out.join(pipeline::EVAL_FILE).is_file());
    let summary_text = fs::read_to_string(out.join(pipeline::SUMMARY_FILE)).unwrap();
    assert!(summary_text.contains("4 ok, 0 failed"), "{summary_text}");
}

#[test]
fn a_missing_image_fails_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = write_slides(tmp.path(), 2, "validation");
    text.push_str("gone.png,benign,validation\n");
    let manifest = DatasetManifest::parse(&text, tmp.path()).unwrap();
    let summary = run_inference(&manifest, &config(&tmp.path().join("out")), true).unwrap();
    assert_eq!(summary.records.len(), 3);
    assert_eq!(summary.failed(), 1);
    let ImageRecord::Failed { path, .. } = &summary.records[2] else {
        panic!()
    };
    assert_eq!(path, "gone.png");
    assert_eq!(summary.report.unwrap().n_images, 2);
}

#[test]
fn recorded_patches_replay_to_the_same_decision() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest =
        DatasetManifest::parse(&write_slides(tmp.path(), 3, "validation"), tmp.path()).unwrap();
    let cfg = config(&tmp.path().join("out"));
    let summary = run_inference(&manifest, &cfg, false).unwrap();
    let backend = cfg.backend.build(cfg.patch_size).unwrap();
    for (rec, entry) in summary.records.iter().zip(&manifest.entries) {
        let ImageRecord::Ok(res) = rec else { panic!() };
        let raster = load_image(&entry.path, None).unwrap();
        let d = replay_decision(&raster, res, backend.as_ref()).unwrap();
        assert_eq!(
            (d.label, d.vote_counts, d.tie_broken),
            (res.decision, res.vote_counts, res.tie_broken)
        );
    }
}

#[test]
fn constant_backend_labels_everything_with_its_argmax() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest =
        DatasetManifest::parse(&write_slides(tmp.path(), 4, "validation"), tmp.path()).unwrap();
    let cfg = RunConfig {
        backend: BackendConfig::Constant {
            probs: [0.1, 0.2, 0.3, 0.4],
        },
        ..config(&tmp.path().join("out"))
    };
    let summary = run_inference(&manifest, &cfg, true).unwrap();
    for r in &summary.records {
        let ImageRecord::Ok(res) = r else { panic!() };
        assert_eq!(res.decision, ClassLabel::Invasive);
        assert!(res.patches.iter().all(|p| p.label == ClassLabel::Invasive));
        assert!(!res.tie_broken);
    }
    let report = summary.report.unwrap();
    assert_eq!(
        (
            report.image_accuracy_4class.correct,
            report.image_accuracy_4class.total
        ),
        (1, 4)
    );
    assert_eq!(
        (
            report.image_accuracy_2class.correct,
            report.image_accuracy_2class.total
        ),
        (2, 4)
    );
}

#[test]
fn evaluate_rescores_saved_results() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest =
        DatasetManifest::parse(&write_slides(tmp.path(), 4, "validation"), tmp.path()).unwrap();
    let out = tmp.path().join("out");
    let summary = run_inference(&manifest, &config(&out), true).unwrap();
    let again = run_evaluate(
        &out.join(pipeline::RESULTS_FILE),
        &manifest,
        &tmp.path().join("eval"),
    )
    .unwrap();
    assert_eq!(Some(again), summary.report);
}

#[test]
fn extract_reports_selections_and_saves_patches() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest =
        DatasetManifest::parse(&write_slides(tmp.path(), 2, "validation"), tmp.path()).unwrap();
    let out = tmp.path().join("out");
    let records = run_extract(&manifest, &config(&out), true).unwrap();
    let mut saved = 0;
    for r in &records {
        let SelectionRecord::Ok { report, .. } = r else {
            panic!("{r:?}")
        };
        assert!(!report.selected.is_empty());
        saved += report.selected.len();
    }
    assert_eq!(
        fs::read_dir(out.join(pipeline::PATCH_DIR)).unwrap().count(),
        saved
    );
    let lines = fs::read_to_string(out.join(pipeline::SELECTIONS_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 2);
}

#[test]
fn mask_writes_mask_and_overlay() {
    let tmp = tempfile::tempdir().unwrap();
    write_slides(tmp.path(), 1, "validation");
    let out = tmp.path().join("m");
    let res = run_mask(&tmp.path().join("s0.png"), &config(&out), &out).unwrap();
    let mask = load_image(&res.mask_path, None).unwrap();
    assert_eq!((mask.width(), mask.height()), (620, 470));
    assert!(mask
        .pixels()
        .iter()
        .all(|p| *p == [0, 0, 0] || *p == [255, 255, 255]));
    assert!(res.overlay_path.is_file());
}

#[test]
fn export_layout_is_class_folders_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest =
        DatasetManifest::parse(&write_slides(tmp.path(), 4, "train"), tmp.path()).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let generated = run_export_training(&manifest, &config(&a)).unwrap();
    run_export_training(
        &manifest,
        &RunConfig {
            workers: 1,
            ..config(&b)
        },
    )
    .unwrap();
    assert_eq!(hashes(&a), hashes(&b));

    assert_eq!(generated.len() % 8, 0);
    for g in &generated {
        let class_dir = g.file.split('/').next().unwrap();
        assert_eq!(class_dir, g.label.as_str());
        assert!(a.join(&g.file).is_file());
    }
    let index: Vec<GeneratedPatch> = fs::read_to_string(a.join(pipeline::GENERATION_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(index, generated);

    let reseeded = tmp.path().join("c");
    run_export_training(
        &manifest,
        &RunConfig {
            seed: 22,
            ..config(&reseeded)
        },
    )
    .unwrap();
    assert_ne!(hashes(&a), hashes(&reseeded));
}

#[test]
fn export_refuses_unlabelled_training_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = write_slides(tmp.path(), 1, "train");
    text.push_str("s0_copy.png,unknown,train\n");
    let manifest = DatasetManifest::parse(&text, tmp.path()).unwrap();
    let out = tmp.path().join("out");
    let err = run_export_training(&manifest, &config(&out)).unwrap_err();
    assert!(err.to_string().contains("s0_copy.png"), "{err}");
    assert!(!out.exists());
}

#[test]
fn export_ignores_validation_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest =
        DatasetManifest::parse(&write_slides(tmp.path(), 2, "validation"), tmp.path()).unwrap();
    assert!(run_export_training(&manifest, &config(&tmp.path().join("out"))).is_err());
}
