use std::path::Path;
use std::process::{Command, Output};

use xmf_core::backbones::ConvSpec;
use xmf_core::datagen::GenSpec;
use xmf_core::fusion::ModelConfig;

fn xmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmf")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> String {
    std::fs::write(path, serde_json::to_string(v).unwrap()).unwrap();
    path.display().to_string()
}

fn tiny_data(root: &Path) -> String {
    let spec = GenSpec {
        n_per_class: [12, 8, 8],
        snp_count: 20,
        image_size: 24,
        ..GenSpec::default()
    };
    let cfg = write_json(&root.join("spec.json"), &spec);
    let dir = root.join("data").display().to_string();
    let out = xmf(&["datagen", "--config", &cfg, "--out", &dir]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn tiny_model(root: &Path, lr: f64) -> String {
    let cfg = ModelConfig {
        d_model: 8,
        tokens: 2,
        clinical_hidden: [8, 8],
        genetic_hidden: [8, 8],
        epochs: 2,
        batch_size: 8,
        learning_rate: lr,
        conv: ConvSpec {
            channels: [2, 2, 2],
            ..ModelConfig::default().conv
        },
        ..ModelConfig::default()
    };
    write_json(&root.join(format!("model_{lr:e}.json")), &cfg)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&xmf(&["--help"])), 0);
    assert_eq!(code(&xmf(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&xmf(&["no-such-command"])), 1);
    assert_eq!(code(&xmf(&["datagen"])), 1);
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o").display().to_string();
    assert_eq!(
        code(&xmf(&[
            "preprocess-snps",
            "--variants",
            "x.tsv",
            "--k-out",
            "5",
            "--out",
            &out
        ])),
        1
    );
    let bad = write_json(
        &tmp.path().join("bad.json"),
        &GenSpec {
            n_per_class: [2, 8, 8],
            ..GenSpec::default()
        },
    );
    assert_eq!(code(&xmf(&["datagen", "--config", &bad, "--out", &out])), 1);
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o").display().to_string();
    let missing = tmp.path().join("missing").display().to_string();
    assert_eq!(code(&xmf(&["train", "--data", &missing, "--out", &out])), 2);
    assert_eq!(code(&xmf(&["report", "--input", &missing])), 2);

    let data = tiny_data(tmp.path());
    std::fs::remove_file(Path::new(&data).join("genetic.csv")).unwrap();
    assert_eq!(code(&xmf(&["train", "--data", &data, "--out", &out])), 2);
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let cfg = tiny_model(tmp.path(), 1e300);
    let out = tmp.path().join("o").display().to_string();
    let run = xmf(&["train", "--data", &data, "--config", &cfg, "--out", &out]);
    assert_eq!(code(&run), 3, "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn train_writes_checkpoint_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let cfg = tiny_model(tmp.path(), 1e-3);
    let out = tmp.path().join("run");
    let run = xmf(&[
        "train",
        "--data",
        &data,
        "--config",
        &cfg,
        "--seed",
        "3",
        "--out",
        &out.display().to_string(),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("checkpoint").exists());
    let report = xmf_core::training::RunReport::read(&out.join("report.json")).unwrap();
    assert_eq!(report.seeds, vec![3, 4, 5, 6, 7]);
    assert!(report.selected_seed.is_some());
    assert_eq!(report.cells[0].runs.len(), 5);
}

#[test]
fn ablate_modality_covers_seven_subsets() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let cfg = tiny_model(tmp.path(), 1e-3);
    let out = tmp.path().join("abl");
    let run = xmf(&[
        "ablate-modality",
        "--data",
        &data,
        "--config",
        &cfg,
        "--seeds",
        "2",
        "--out",
        &out.display().to_string(),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let report = xmf_core::training::RunReport::read(&out.join("report.json")).unwrap();
    assert_eq!(report.cells.len(), 7);
    assert!(out.join("box.csv").exists());
}
