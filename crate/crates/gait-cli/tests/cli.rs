//! End-to-end command tests against the built binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gait() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gait"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    gait()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) {
    let base = r#"
seed = 11
out = "run"
workers = 1

[dataset]
root = "data"
identities = 3
views = [0, 90, 180]
frames = 24

[train]
identities_per_batch = 2
seqs_per_identity = 2
steps = 6
checkpoint_every = 3
learning_rate = 1e-3
"#;
    fs::write(dir.join("cfg.toml"), format!("{base}\n{extra}")).unwrap();
}

#[test]
fn gen_data_is_seed_deterministic_and_respects_force() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let out = run_in(dir.path(), &["gen-data", "--config", "cfg.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.err_all()));
    let summary = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(summary.contains("sequences=54"), "{summary}");

    // second run without --force must refuse and leave data intact
    let out = run_in(dir.path(), &["gen-data", "--config", "cfg.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));

    let probe = dir.path().join("data/001/NM-00/000/0000.pgm");
    let before = fs::read(&probe).unwrap();
    let out = run_in(dir.path(), &["gen-data", "--config", "cfg.toml", "--force"]);
    assert!(out.status.success());
    let after = fs::read(&probe).unwrap();
    assert_eq!(before, after, "same seed must produce byte-identical data");
}

#[test]
fn invalid_view_list_rejected_before_any_write() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let mut cfg = fs::read_to_string(dir.path().join("cfg.toml")).unwrap();
    cfg = cfg.replace("views = [0, 90, 180]", "views = [0, 90, 999]");
    fs::write(dir.path().join("cfg.toml"), cfg).unwrap();
    let out = run_in(dir.path(), &["gen-data", "--config", "cfg.toml"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("data").exists(), "no files may be written");
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), "mystery = 1").unwrap();
    let out = run_in(dir.path(), &["gen-data", "--config", "cfg.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}

#[test]
fn train_then_eval_produces_reports_and_too_small_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    assert!(run_in(dir.path(), &["gen-data", "--config", "cfg.toml"]).status.success());

    // batch larger than the dataset supports is rejected with counts
    let out = run_in(
        dir.path(),
        &["train", "--config", "cfg.toml", "--out", "bad"],
    );
    // default P=2 K=2 fits; force a failure via a second config
    let mut cfg = fs::read_to_string(dir.path().join("cfg.toml")).unwrap();
    cfg = cfg.replace("identities_per_batch = 2", "identities_per_batch = 6");
    fs::write(dir.path().join("big.toml"), cfg).unwrap();
    let big = run_in(dir.path(), &["train", "--config", "big.toml"]);
    assert!(!big.status.success());
    assert!(String::from_utf8_lossy(&big.stderr).contains("identities"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // evaluation of the final checkpoint
    let out = run_in(
        dir.path(),
        &[
            "eval",
            "--config",
            "cfg.toml",
            "--checkpoint",
            "bad/ckpt-000006",
            "--out",
            "evalout",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("evalout/report.txt")).unwrap();
    assert!(table.contains("model NM"));
    assert!(table.contains("model CL"));
    let cells = fs::read_to_string(dir.path().join("evalout/report_cells.csv")).unwrap();
    assert!(cells.starts_with("condition,probe_view,gallery_view,accuracy"));
    // 3 conditions x 3 probe views x 2 off-diagonal gallery views
    assert_eq!(cells.lines().count(), 1 + 18);
}

#[test]
fn eval_with_mismatched_model_config_names_parameter() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    assert!(run_in(dir.path(), &["gen-data", "--config", "cfg.toml"]).status.success());
    assert!(run_in(dir.path(), &["train", "--config", "cfg.toml"]).status.success());
    let mut cfg = fs::read_to_string(dir.path().join("cfg.toml")).unwrap();
    cfg = cfg.replace("[train]", "[model]\nembed_dim = 16\n\n[train]");
    fs::write(dir.path().join("other.toml"), cfg).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "eval",
            "--config",
            "other.toml",
            "--checkpoint",
            "run/ckpt-000006",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("head0.weight"), "{err}");
}

#[test]
fn train_resume_continues_to_the_target_step() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    assert!(run_in(dir.path(), &["gen-data", "--config", "cfg.toml"]).status.success());
    assert!(run_in(dir.path(), &["train", "--config", "cfg.toml"]).status.success());
    // resume from the mid-run checkpoint into a fresh output dir
    let out = run_in(
        dir.path(),
        &[
            "train",
            "--config",
            "cfg.toml",
            "--resume",
            "run/ckpt-000003",
            "--out",
            "resumed",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("resumed/ckpt-000006").is_dir());
    // bit-identical to the unbroken run
    for name in ["manifest.txt", "params.bin", "moments.bin"] {
        let a = fs::read(dir.path().join("run/ckpt-000006").join(name)).unwrap();
        let b = fs::read(dir.path().join("resumed/ckpt-000006").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs after resume");
    }
}

#[test]
fn gradcheck_passes_and_prints_per_check_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gradcheck"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("full_model_micro"));
    assert!(text.lines().filter(|l| l.contains("PASS")).count() >= 15);
    assert!(!text.contains("FAIL"));
}

#[test]
fn eval_exports_embeddings_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    assert!(run_in(dir.path(), &["gen-data", "--config", "cfg.toml"]).status.success());
    assert!(run_in(dir.path(), &["train", "--config", "cfg.toml"]).status.success());
    let out = run_in(
        dir.path(),
        &["eval", "--config", "cfg.toml", "--checkpoint", "run/ckpt-000006"],
    );
    assert!(out.status.success());
    let manifest = fs::read_to_string(dir.path().join("run/embeddings.txt")).unwrap();
    // gallery (9) + probes (27): one line per sequence, 6 fields each
    assert_eq!(manifest.lines().count(), 9 + 27);
    // heads = 8, d_e = 64 from the default model section
    let bin = fs::read(dir.path().join("run/embeddings.bin")).unwrap();
    assert_eq!(bin.len(), (9 + 27) * 8 * 64 * 8);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let a = run_in(
        dir.path(),
        &["gen-data", "--config", "cfg.toml", "--seed", "5"],
    );
    assert!(a.status.success());
    let frame_a = fs::read(dir.path().join("data/001/NM-00/000/0000.pgm")).unwrap();
    fs::remove_dir_all(dir.path().join("data")).unwrap();
    let b = run_in(
        dir.path(),
        &["gen-data", "--config", "cfg.toml", "--seed", "6"],
    );
    assert!(b.status.success());
    let frame_b = fs::read(dir.path().join("data/001/NM-00/000/0000.pgm")).unwrap();
    assert_ne!(frame_a, frame_b, "different seeds must change the data");
}

trait ErrAll {
    fn err_all(&self) -> Vec<u8>;
}

impl ErrAll for Output {
    fn err_all(&self) -> Vec<u8> {
        let mut v = self.stdout.clone();
        v.extend_from_slice(&self.stderr);
        v
    }
}
