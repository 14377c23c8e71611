//! End-to-end tests of the `proxygml` binary: artifact layout, output
//! formats, and the exit-code contract (0 success, 1 usage/config,
//! 2 runtime fault).

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_proxygml"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const QUICK_CONFIG: &str = "\
classes = 4
per_class = 12
d_in = 8
d_embed = 8
noise_sigma = 0.1
proxies_per_class = 2
ratio = 0.5
batch_size = 8
epochs = 2
eval_ns = 1,2
out = run
";

#[test]
fn train_then_evaluate_matches_final_metrics() {
    let dir = tempdir().unwrap();
    std::fs::write(dir.path().join("quick.conf"), QUICK_CONFIG).unwrap();

    let train = run(&["train", "--config", "quick.conf"], dir.path());
    assert_code(&train, 0);
    assert!(dir.path().join("run/checkpoint.pgck").exists());
    assert!(dir.path().join("run/metrics.jsonl").exists());
    assert!(dir.path().join("run/dataset.csv").exists());

    let eval = run(
        &[
            "evaluate",
            "--checkpoint",
            "run/checkpoint.pgck",
            "--data",
            "run/dataset.csv",
            "--ns",
            "1,2",
        ],
        dir.path(),
    );
    assert_code(&eval, 0);
    let report: serde_json::Value =
        serde_json::from_slice(&eval.stdout).expect("evaluate prints JSON");

    // The evaluation must reproduce the trainer's final epoch exactly.
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.jsonl")).unwrap();
    let last: serde_json::Value =
        serde_json::from_str(metrics.lines().last().unwrap()).unwrap();
    assert_eq!(report["recall"]["recall@1"], last["recall@1"]);
    assert_eq!(report["recall"]["recall@2"], last["recall@2"]);
    assert_eq!(report["nmi"], last["nmi"]);
}

#[test]
fn train_seed_flag_changes_results_and_out_flag_moves_them() {
    let dir = tempdir().unwrap();
    std::fs::write(dir.path().join("quick.conf"), QUICK_CONFIG).unwrap();
    let a = run(
        &["train", "--config", "quick.conf", "--out", "a"],
        dir.path(),
    );
    assert_code(&a, 0);
    let b = run(
        &["train", "--config", "quick.conf", "--out", "b", "--seed", "7"],
        dir.path(),
    );
    assert_code(&b, 0);
    let ma = std::fs::read(dir.path().join("a/metrics.jsonl")).unwrap();
    let mb = std::fs::read(dir.path().join("b/metrics.jsonl")).unwrap();
    assert_ne!(ma, mb, "seed override must change the run");
    assert!(dir.path().join("a/checkpoint.pgck").exists());
    assert!(dir.path().join("b/checkpoint.pgck").exists());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "wibble = 3\n").unwrap();
    let out = run(&["train", "--config", "bad.conf"], dir.path());
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("wibble"));
}

#[test]
fn invalid_config_value_is_a_usage_error() {
    let dir = tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "batch_size = 1\n").unwrap();
    let out = run(&["train", "--config", "bad.conf"], dir.path());
    assert_code(&out, 1);
}

#[test]
fn missing_required_argument_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let out = run(&["train"], dir.path());
    assert_code(&out, 1);
    let out = run(&["frobnicate"], dir.path());
    assert_code(&out, 1);
}

#[test]
fn help_and_version_succeed() {
    let dir = tempdir().unwrap();
    let help = run(&["--help"], dir.path());
    assert_code(&help, 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("train"));
    let version = run(&["--version"], dir.path());
    assert_code(&version, 0);
}

#[test]
fn corrupt_checkpoint_is_a_runtime_fault() {
    let dir = tempdir().unwrap();
    std::fs::write(dir.path().join("quick.conf"), QUICK_CONFIG).unwrap();
    let train = run(&["train", "--config", "quick.conf"], dir.path());
    assert_code(&train, 0);

    let ck_path = dir.path().join("run/checkpoint.pgck");
    let mut bytes = std::fs::read(&ck_path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    std::fs::write(&ck_path, &bytes).unwrap();

    let eval = run(
        &[
            "evaluate",
            "--checkpoint",
            "run/checkpoint.pgck",
            "--data",
            "run/dataset.csv",
        ],
        dir.path(),
    );
    assert_code(&eval, 2);
    assert!(String::from_utf8_lossy(&eval.stderr).contains("integrity"));
}

#[test]
fn missing_files_are_runtime_faults() {
    let dir = tempdir().unwrap();
    let out = run(
        &[
            "evaluate",
            "--checkpoint",
            "nope.pgck",
            "--data",
            "nope.csv",
        ],
        dir.path(),
    );
    assert_code(&out, 2);
}

#[test]
fn gradcheck_passes_by_default_and_fails_when_corrupted() {
    let dir = tempdir().unwrap();
    let ok = run(&["gradcheck"], dir.path());
    assert_code(&ok, 0);
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["max_rel_err"].as_f64().unwrap() < 1e-4);

    let bad = run(&["gradcheck", "--corrupt"], dir.path());
    assert_code(&bad, 2);
    let report: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn gradcheck_accepts_a_config_file() {
    let dir = tempdir().unwrap();
    std::fs::write(
        dir.path().join("gc.conf"),
        "classes = 3\nper_class = 4\nd_in = 6\nd_embed = 6\nproxies_per_class = 2\nratio = 1\nbatch_size = 6\n",
    )
    .unwrap();
    let out = run(&["gradcheck", "--config", "gc.conf"], dir.path());
    assert_code(&out, 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    // 3 classes × 2 proxies × 6 dims + 6 × 6 embeddings (identity head).
    assert_eq!(report["scalars_checked"], 36 + 36);
}

#[test]
fn ablate_writes_eight_rows() {
    let dir = tempdir().unwrap();
    std::fs::write(
        dir.path().join("quick.conf"),
        "classes = 3\nper_class = 8\nd_in = 6\nd_embed = 6\nnoise_sigma = 0.1\n\
         proxies_per_class = 2\nratio = 0.5\nbatch_size = 6\nepochs = 1\neval_ns = 1\nout = run\n",
    )
    .unwrap();
    let out = run(&["ablate", "--config", "quick.conf"], dir.path());
    assert_code(&out, 0);
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.len(), 8);
    let file: Vec<serde_json::Value> = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run/ablate/ablation.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(rows, file);
    for i in 1..=8 {
        assert!(dir
            .path()
            .join(format!("run/ablate/row{i}/checkpoint.pgck"))
            .exists());
    }
}
