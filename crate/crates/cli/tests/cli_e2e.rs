//! End-to-end CLI tests driving the `pfdm` binary.

use std::path::Path;
use std::process::Command;

fn pfdm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pfdm"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let text = r#"
mode = "pfdm"
seed = 9
t0 = 8
num_labels = 10

[schedule]
t_steps = 24
beta_start = 1e-3
beta_end = 0.08

[data]
side = 8
train_per_class = 12
test_per_class = 4

[partition]
majority_count = 25
minority_count = 5

[local_training]
steps = 25
batch_size = 8
hidden = [16]
time_embed_dim = 4
label_conditioning = true

[global_training]
steps = 30
batch_size = 8
hidden = [16]
time_embed_dim = 4
label_conditioning = true

[eval]
samples_per_class = 3
"#;
    let path = dir.join("tiny.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["quick.toml", "study-8x8.toml"] {
        let cfg = pfdm_core::config::ExperimentConfig::load(&root.join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap();
    }
}

#[test]
fn print_config_emits_parseable_toml() {
    let out = run_ok(pfdm().arg("print-config"));
    let cfg = pfdm_core::config::ExperimentConfig::from_toml(&out).unwrap();
    assert_eq!(cfg, pfdm_core::config::ExperimentConfig::default());
}

#[test]
fn account_reproduces_published_numbers() {
    let out = run_ok(pfdm().args([
        "account",
        "--t0",
        "400",
        "--bound",
        "10",
        "--mode",
        "per_sample",
        "--delta",
        "1e-5",
    ]));
    let eps_line = out.lines().find(|l| l.trim_start().starts_with("epsilon ")).unwrap();
    let eps: f64 = eps_line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((eps - 95.0).abs() < 1.5, "{eps}");

    let out = run_ok(pfdm().args(["account", "--solve-epsilon", "16.6"]));
    assert!(out.contains("t0 = 205"), "{out}");

    // invalid flag combination: group privacy with a per-sample bound
    let out = pfdm()
        .args(["account", "--t0", "400", "--mode", "per_sample", "--group-size", "10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn account_sweep_writes_full_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sweep.csv");
    run_ok(pfdm().args([
        "account",
        "--t-steps",
        "200",
        "--sweep",
        csv_path.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 201);
    assert!(csv.starts_with("t0,alpha_bar,tau,gamma_star,epsilon"));
}

#[test]
fn schedule_table_export() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.txt");
    run_ok(pfdm().args([
        "schedule",
        "--t-steps",
        "12",
        "--out",
        path.to_str().unwrap(),
    ]));
    let table = std::fs::read_to_string(&path).unwrap();
    assert_eq!(table.lines().count(), 13);
}

#[test]
fn gen_data_and_partition_produce_idx_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    run_ok(pfdm().args([
        "gen-data",
        "--out-dir",
        data_dir.to_str().unwrap(),
        "--train-per-class",
        "12",
        "--test-per-class",
        "4",
    ]));
    let train = pfdm_core::data::load_mnist_idx(
        &data_dir.join("train-images.idx"),
        &data_dir.join("train-labels.idx"),
    )
    .unwrap();
    assert_eq!(train.count(), 120);

    let cfg = tiny_config(dir.path());
    let parts = dir.path().join("parts");
    run_ok(pfdm().args([
        "partition",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        parts.to_str().unwrap(),
    ]));
    let manifest = std::fs::read_to_string(parts.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 61); // header + 2 clients x 30
    let c0 = pfdm_core::data::load_mnist_idx(
        &parts.join("client0-images.idx"),
        &parts.join("client0-labels.idx"),
    )
    .unwrap();
    assert_eq!(c0.count(), 30);
}

#[test]
fn run_sample_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("out");

    // pfdm run writes exactly M local checkpoints plus one global
    let stdout = run_ok(pfdm().args([
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    assert!(stdout.contains("privacy: epsilon"));
    let run_dir = std::fs::read_dir(&out_dir).unwrap().next().unwrap().unwrap().path();
    for artifact in
        ["global.pfdc", "local0.pfdc", "local1.pfdc", "manifest.csv", "audit.json", "privacy.txt", "run.json", "metrics.csv"]
    {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }
    let audit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("audit.json")).unwrap()).unwrap();
    let entries = audit.as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert!(entries.iter().all(|e| e["kind"] == "noisy_dataset"));

    // split sampling from the checkpoints; trajectory strip for staging
    let png = dir.path().join("grid.png");
    let strip = dir.path().join("strip.png");
    let img_idx = dir.path().join("s-images.idx");
    let lab_idx = dir.path().join("s-labels.idx");
    run_ok(pfdm().args([
        "sample",
        "--global",
        run_dir.join("global.pfdc").to_str().unwrap(),
        "--local",
        run_dir.join("local0.pfdc").to_str().unwrap(),
        "--t0",
        "8",
        "--t-steps",
        "24",
        "--beta-start",
        "1e-3",
        "--beta-end",
        "0.08",
        "--count",
        "40",
        "--labels",
        "0,5",
        "--out-png",
        png.to_str().unwrap(),
        "--trajectory",
        strip.to_str().unwrap(),
        "--out-idx",
        img_idx.to_str().unwrap(),
        lab_idx.to_str().unwrap(),
    ]));
    assert!(png.exists() && strip.exists());
    let sampled = pfdm_core::data::load_mnist_idx(&img_idx, &lab_idx).unwrap();
    assert_eq!(sampled.count(), 80);

    // t0 = 0 returns global-stage samples unchanged (no local checkpoint needed)
    run_ok(pfdm().args([
        "sample",
        "--global",
        run_dir.join("global.pfdc").to_str().unwrap(),
        "--t-steps",
        "24",
        "--beta-start",
        "1e-3",
        "--beta-end",
        "0.08",
        "--count",
        "2",
        "--out-png",
        dir.path().join("global-only.png").to_str().unwrap(),
    ]));

    // eval of a sample set against itself: mmd is estimator-noise small
    let stdout = run_ok(pfdm().args([
        "eval",
        "--samples",
        img_idx.to_str().unwrap(),
        lab_idx.to_str().unwrap(),
        "--reference",
        img_idx.to_str().unwrap(),
        lab_idx.to_str().unwrap(),
        "--reference-train",
        img_idx.to_str().unwrap(),
        lab_idx.to_str().unwrap(),
    ]));
    let mmd_line = stdout.lines().find(|l| l.starts_with("mmd^2")).unwrap();
    let mmd: f64 = mmd_line.split('=').nth(1).unwrap().trim().split(' ').next().unwrap().parse().unwrap();
    assert!(mmd.abs() < 0.05, "{mmd}");

    // evaluation gate failure uses its own exit code
    let out = pfdm()
        .args([
            "eval",
            "--samples",
            img_idx.to_str().unwrap(),
            lab_idx.to_str().unwrap(),
            "--reference",
            img_idx.to_str().unwrap(),
            lab_idx.to_str().unwrap(),
            "--reference-train",
            img_idx.to_str().unwrap(),
            lab_idx.to_str().unwrap(),
            "--min-agreement",
            "1.1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn run_over_http_transport_matches_artifact_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("out-http");
    let stdout = run_ok(pfdm().args([
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--transport",
        "http",
        "--train-only",
    ]));
    assert!(stdout.contains("session s"), "{stdout}");
    let run_dir = std::fs::read_dir(&out_dir).unwrap().next().unwrap().unwrap().path();
    for artifact in ["global.pfdc", "local0.pfdc", "local1.pfdc", "audit.json"] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }
}

#[test]
fn non_collaborative_and_non_private_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    for (mode, expect_global, expect_locals) in
        [("non-collaborative", false, 2usize), ("non-private", true, 0)]
    {
        let out_dir = dir.path().join(format!("out-{mode}"));
        run_ok(pfdm().args([
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--mode",
            mode,
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--train-only",
        ]));
        let run_dir = std::fs::read_dir(&out_dir).unwrap().next().unwrap().unwrap().path();
        assert_eq!(run_dir.join("global.pfdc").exists(), expect_global, "{mode}");
        let locals = std::fs::read_dir(&run_dir)
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with("local")
            })
            .count();
        assert_eq!(locals, expect_locals, "{mode}");
        assert!(!run_dir.join("audit.json").exists(), "{mode} exchanges nothing");
    }
}

#[test]
fn rerunning_a_stage_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut blobs = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        run_ok(pfdm().args([
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--train-only",
        ]));
        let run_dir = std::fs::read_dir(&out_dir).unwrap().next().unwrap().unwrap().path();
        blobs.push((
            std::fs::read(run_dir.join("global.pfdc")).unwrap(),
            std::fs::read(run_dir.join("local0.pfdc")).unwrap(),
            std::fs::read_to_string(run_dir.join("manifest.csv")).unwrap(),
        ));
    }
    assert_eq!(blobs[0], blobs[1]);
}

#[test]
fn config_errors_use_exit_code_two() {
    let out = pfdm().args(["run", "--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "t0 = 0\n").unwrap();
    let out = pfdm().args(["run", "--config", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
