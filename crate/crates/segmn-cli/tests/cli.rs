//! End-to-end CLI checks driving the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn segmn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_segmn"))
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> TempDir {
        let path = std::env::temp_dir().join(format!(
            "segmn-cli-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&path).unwrap();
        TempDir(path)
    }

    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn segmn");
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn gen_labeled_dataset(dir: &Path, n_graphs: usize) {
    run_ok(segmn().args([
        "gen",
        "--out",
        dir.to_str().unwrap(),
        "--n-graphs",
        &n_graphs.to_string(),
        "--n-min",
        "4",
        "--n-max",
        "6",
        "--seed",
        "3",
    ]));
    run_ok(segmn().args(["label", "--data", dir.to_str().unwrap()]));
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let out = segmn().output().unwrap();
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "expected usage text, got: {text}");
}

#[test]
fn unknown_flag_is_rejected() {
    let out = segmn().args(["gen", "--out", "/tmp/x", "--bogus-flag", "1"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn errors_are_single_line_and_machine_parsable() {
    let out = segmn()
        .args(["oracle", "--pair", "/nonexistent/a.json", "/nonexistent/b.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("error: "));
}

#[test]
fn oracle_on_identical_files_reports_zero_distance() {
    let tmp = TempDir::new("oracle");
    let record = r#"{"id":"a","num_nodes":3,"edges":[[0,1],[1,2]]}"#;
    let path = tmp.path().join("a.json");
    std::fs::write(&path, record).unwrap();
    let out = run_ok(segmn().args([
        "oracle",
        "--pair",
        path.to_str().unwrap(),
        path.to_str().unwrap(),
    ]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("ged=0"), "{text}");
    assert!(text.contains("target=1"), "{text}");
}

#[test]
fn gen_label_transform_round_trip() {
    let tmp = TempDir::new("pipeline");
    let data = tmp.path().join("data");
    gen_labeled_dataset(&data, 10);

    assert!(data.join("manifest.json").exists());
    assert!(data.join("labels.tsv").exists());
    assert!(data.join("run-manifest-gen.json").exists());
    assert!(data.join("run-manifest-label.json").exists());

    let out = run_ok(segmn().args([
        "transform",
        "--data",
        data.to_str().unwrap(),
        "--graph",
        "g0000",
    ]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("line graph of `g0000`"), "{text}");

    let out = run_ok(segmn().args([
        "transform",
        "--data",
        data.to_str().unwrap(),
        "--pair",
        "g0000",
        "g0001",
    ]));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("assignment graph"), "{text}");
}

#[test]
fn train_eval_and_dump_matrix_produce_artifacts() {
    let tmp = TempDir::new("train");
    let data = tmp.path().join("data");
    gen_labeled_dataset(&data, 10);

    // A deliberately tiny config keeps this a smoke test.
    let cfg = tmp.path().join("fast.cfg");
    std::fs::write(
        &cfg,
        "epochs = 3\nhidden = 8\nlayers = 2\ndk = 8\nconv_channels = 3\nmlp_hidden = 4\nbatch_size = 16\neval_every = 2\n",
    )
    .unwrap();

    let run = tmp.path().join("run");
    run_ok(segmn().args([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--seed",
        "9",
        "--spm-layers",
        "1",
    ]));
    assert!(run.join("model.ckpt").exists());
    assert!(run.join("train.log").exists());
    assert!(run.join("eval.json").exists());
    let manifest = std::fs::read_to_string(run.join("run-manifest-train.json")).unwrap();
    assert!(manifest.contains("\"seed\": \"9\""), "{manifest}");
    let log = std::fs::read_to_string(run.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let out = run_ok(segmn().args([
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        run.join("model.ckpt").to_str().unwrap(),
        "--out",
        tmp.path().join("evalout").to_str().unwrap(),
    ]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("rho="));
    assert!(tmp.path().join("evalout/eval.json").exists());

    let dump = tmp.path().join("dump");
    run_ok(segmn().args([
        "dump-matrix",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        run.join("model.ckpt").to_str().unwrap(),
        "--pair",
        "g0000",
        "g0001",
        "--out",
        dump.to_str().unwrap(),
    ]));
    for file in ["s1.txt", "s1_spm.txt", "heat.txt"] {
        assert!(dump.join(file).exists(), "missing {file}");
    }
    // The numeric grid has one row per node of g0000.
    let s1 = std::fs::read_to_string(dump.join("s1.txt")).unwrap();
    assert!(!s1.trim().is_empty());

    // --spm-layers 0 disables SPM entirely and still trains.
    let run0 = tmp.path().join("run0");
    run_ok(segmn().args([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run0.to_str().unwrap(),
        "--spm-layers",
        "0",
    ]));
    assert!(run0.join("model.ckpt").exists());
}

#[test]
fn ablate_emits_six_rows_and_is_seed_stable() {
    let tmp = TempDir::new("ablate");
    let data = tmp.path().join("data");
    gen_labeled_dataset(&data, 10);
    let cfg = tmp.path().join("fast.cfg");
    std::fs::write(
        &cfg,
        "epochs = 2\nhidden = 8\nlayers = 2\ndk = 8\nconv_channels = 3\nmlp_hidden = 4\nbatch_size = 16\neval_every = 0\n",
    )
    .unwrap();

    let run = |dir: &str| {
        let out_dir = tmp.path().join(dir);
        run_ok(segmn().args([
            "ablate",
            "--data",
            data.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]));
        std::fs::read_to_string(out_dir.join("ablate.json")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b, "fixed seed must give a bit-identical report");

    let report: serde_json::Value = serde_json::from_str(&a).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    let labels: Vec<&str> = rows.iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert!(labels.contains(&"DE+SPM (full model)"));
    assert!(rows.iter().all(|r| r["status"] == "ok"));
}

#[test]
fn portability_emits_four_rows() {
    let tmp = TempDir::new("port");
    let data = tmp.path().join("data");
    gen_labeled_dataset(&data, 10);
    let cfg = tmp.path().join("fast.cfg");
    std::fs::write(
        &cfg,
        "epochs = 2\nhidden = 8\nlayers = 2\ndk = 8\nconv_channels = 3\nmlp_hidden = 4\nbatch_size = 16\neval_every = 0\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    run_ok(segmn().args([
        "portability",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("portability.json")).unwrap())
            .unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["spm_executions"], 0);
}
