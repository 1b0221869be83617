//! End-to-end checks of the command-line surface on small budgets: bundle
//! layout, determinism, exit codes, archives, report assembly, scatters.

use std::path::{Path, PathBuf};
use std::process::Command;

fn data_dir() -> PathBuf {
    if let Ok(env) = std::env::var("DIM_DATA_DIR") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn dim_cmd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dim"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.ini");
    std::fs::write(&path, body).unwrap();
    path
}

/// Zero-epoch trainings still exercise init, persistence, and manifests.
const FAST_TRAIN: &str = "
[train]
denoiser_epochs = 0
im_epochs = 0
baseline_epochs = 0
[attack]
samples = 20
attacks = Linf:FastGradientAttack
[tsne]
samples = 120
perplexity = 30
iters = 60
";

#[test]
fn train_dim_writes_eleven_checkpoints_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FAST_TRAIN);
    let out = tmp.path().join("run");
    let status = dim_cmd()
        .args(["train", "--model", "dim"])
        .arg("--config").arg(&cfg)
        .arg("--data").arg(data_dir())
        .arg("--out").arg(&out)
        .args(["--seed", "3"])
        .status()
        .unwrap();
    assert!(status.success());
    let bundle = out.join("models/dim");
    let checkpoints: Vec<_> = std::fs::read_dir(&bundle)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "dimc"))
        .collect();
    assert_eq!(checkpoints.len(), 11, "1 denoiser + 10 internal models");
    assert!(bundle.join("manifest.txt").exists());
    assert!(bundle.join("manifest_train.txt").exists());
    assert!(bundle.join("loss.csv").exists());
    let manifest = std::fs::read_to_string(bundle.join("manifest_train.txt")).unwrap();
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("hash denoiser.dimc"));
}

#[test]
fn same_seed_trains_byte_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_body = "
[train]
denoiser_epochs = 0
im_epochs = 0
baseline_epochs = 1
batch_size = 256
";
    let cfg = write_config(tmp.path(), cfg_body);
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = dim_cmd()
            .args(["train", "--model", "cnn"])
            .arg("--config").arg(&cfg)
            .arg("--data").arg(data_dir())
            .arg("--out").arg(&out)
            .args(["--seed", "11"])
            .status()
            .unwrap();
        assert!(status.success());
        bytes.push(std::fs::read(out.join("models/cnn/model.dimc")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "training is bit-reproducible under a fixed seed");
}

#[test]
fn missing_dataset_exits_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FAST_TRAIN);
    let output = dim_cmd()
        .args(["train", "--model", "dim"])
        .arg("--config").arg(&cfg)
        .arg("--data").arg(tmp.path().join("nowhere"))
        .arg("--out").arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());
}

#[test]
fn unknown_model_and_attack_exit_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FAST_TRAIN);
    let status = dim_cmd()
        .args(["train", "--model", "abs"])
        .arg("--config").arg(&cfg)
        .arg("--data").arg(data_dir())
        .arg("--out").arg(tmp.path().join("run"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let status = dim_cmd()
        .args(["attack", "--model", "cnn", "--attacks", "L2:BrendelBethgeAttack"])
        .arg("--config").arg(&cfg)
        .arg("--data").arg(data_dir())
        .arg("--out").arg(tmp.path().join("run"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "import-only attacks cannot be run");
}

#[test]
fn divergent_training_exits_with_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "
[train]
baseline_epochs = 1
lr = 1e30
batch_size = 4096
",
    );
    let output = dim_cmd()
        .args(["train", "--model", "cnn"])
        .arg("--config").arg(&cfg)
        .arg("--data").arg(data_dir())
        .arg("--out").arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn attack_report_tsne_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FAST_TRAIN);
    let out = tmp.path().join("run");
    let base = |args: &[&str]| {
        let mut c = dim_cmd();
        c.args(args)
            .arg("--config").arg(&cfg)
            .arg("--data").arg(data_dir())
            .arg("--out").arg(&out)
            .args(["--seed", "5"]);
        c
    };
    assert!(base(&["train", "--model", "dim"]).status().unwrap().success());
    assert!(base(&["train", "--model", "cnn"]).status().unwrap().success());
    // Attack both models with the single configured attack.
    assert!(base(&["attack", "--model", "cnn"]).status().unwrap().success());
    assert!(base(&["attack", "--model", "dim"]).status().unwrap().success());
    let cnn_archive = out.join("archives/cnn/Linf_FastGradientAttack");
    let rec = std::fs::read(cnn_archive.join("records.bin")).unwrap();
    assert_eq!(rec.len() % (4 + 1 + 16 + 784 * 4), 0);
    assert_eq!(rec.len() / (4 + 1 + 16 + 784 * 4), 20, "archive covers the configured subset");

    // Report renders two model columns.
    assert!(base(&["report"]).status().unwrap().success());
    let csv = std::fs::read_to_string(out.join("report/report.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "attack,norm,epsilon,cnn,dim");
    assert!(csv.contains("MINIMAL_ACCURACY"));

    // Importing an external archive (unimplemented attack name is fine for
    // table math) adds exactly one row.
    let rows_before = csv.lines().count();
    let imported = out.join("archives/cnn/L2_BrendelBethgeAttack");
    let mut records = Vec::new();
    for i in 0..20u32 {
        records.push(dim::attacks::ArchiveRecord {
            index: i,
            success: i % 2 == 0,
            distances: dim::attacks::Distances { l0: 30.0, l1: 4.0, l2: 1.0, linf: 0.2 },
            image: if i % 2 == 0 { Some(vec![0.5; 784]) } else { None },
        });
    }
    let archive = dim::attacks::AttackArchive {
        model: "cnn".into(),
        attack: "BrendelBethgeAttack".into(),
        norm: dim::attacks::Norm::L2,
        epsilon: None,
        records,
    };
    dim::attacks::write_archive(&archive, &imported, None).unwrap();
    assert!(base(&["report"]).status().unwrap().success());
    let csv2 = std::fs::read_to_string(out.join("report/report.csv")).unwrap();
    assert_eq!(csv2.lines().count(), rows_before + 1);
    assert!(csv2.contains("BrendelBethgeAttack"));

    // t-SNE emits ten scatters and is reproducible.
    assert!(base(&["tsne", "--model", "dim"]).status().unwrap().success());
    let tsne_dir = out.join("tsne/dim");
    let svgs = (0..10)
        .filter(|k| tsne_dir.join(format!("model_{k}.svg")).exists())
        .count();
    assert_eq!(svgs, 10);
    let first = std::fs::read_to_string(tsne_dir.join("model_0.csv")).unwrap();
    assert!(base(&["tsne", "--model", "dim"]).status().unwrap().success());
    let second = std::fs::read_to_string(tsne_dir.join("model_0.csv")).unwrap();
    assert_eq!(first, second, "same seed reruns identically");
}

#[test]
fn tsne_rejects_oversized_perplexity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "
[train]
denoiser_epochs = 0
im_epochs = 0
[tsne]
samples = 60
perplexity = 30
",
    );
    let out = tmp.path().join("run");
    let base = |args: &[&str]| {
        let mut c = dim_cmd();
        c.args(args)
            .arg("--config").arg(&cfg)
            .arg("--data").arg(data_dir())
            .arg("--out").arg(&out);
        c
    };
    assert!(base(&["train", "--model", "dim"]).status().unwrap().success());
    let output = base(&["tsne", "--model", "dim"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("perplexity"));
}
