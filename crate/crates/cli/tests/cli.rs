use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mnist_dir() -> PathBuf {
    std::env::var_os("IBOOD_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset"))
}

fn ibood(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibood"))
        .args(args)
        .env_remove("IBOOD_OUTPUT_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    let text = format!(
        "data_dir = {:?}\noutput_dir = \"out\"\nrepetitions = 1\n{extra}\n[head]\nmode = \"projected\"\ndim = 8\n\n[gan]\nepochs = 1\nbatch_size = 32\npool_limit = 32\n\n[ib]\nsteps = 2\n",
        mnist_dir()
    );
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_succeeds_and_bad_arguments_are_validation_errors() {
    assert_eq!(ibood(&["--help"]).status.code(), Some(0));
    assert_eq!(ibood(&["run"]).status.code(), Some(1));
    assert_eq!(ibood(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = ibood(&["run", "--config", cfg.to_str().unwrap(), "--repetitions", "0"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("repetitions must be at least 1"));
}

#[test]
fn report_on_empty_directory_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = ibood(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn smoke_run_then_report_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let out = ibood(&["run", "--config", cfg, "--ood-class", "8"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let run_dir = dir.path().join("out");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3);
    assert!(run_dir.join("config.toml").exists());
    assert!(run_dir.join("ood-8/rep-0/cell.json").exists());

    let aggregate = fs::read(run_dir.join("aggregate.json")).unwrap();
    let out = ibood(&["report", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read(run_dir.join("aggregate.json")).unwrap(), aggregate);

    let again = ibood(&["run", "--config", cfg, "--ood-class", "8"]);
    assert_eq!(again.status.code(), Some(2));
    let resumed = ibood(&["run", "--config", cfg, "--ood-class", "8", "--resume"]);
    assert_eq!(resumed.status.code(), Some(0), "{}", stderr(&resumed));

    let out = ibood(&["eval", "--config", cfg, "--ood-class", "8", "--stage", "pretrained"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = String::from_utf8(out.stdout).unwrap();
    let saved = fs::read_to_string(run_dir.join("ood-8/rep-0/report-pretrained.json")).unwrap();
    assert_eq!(report, saved);

    let csv = dir.path().join("emb.csv");
    let out = ibood(&[
        "export-embeddings",
        "--config",
        cfg,
        "--ood-class",
        "8",
        "--split",
        "support",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "id,label,is_ood,z0,z1,z2,z3,z4,z5,z6,z7");
    assert_eq!(lines.count(), 90);
}

#[test]
fn output_root_variable_redirects_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ood_classes = [1]");
    let root = dir.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_ibood"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("IBOOD_OUTPUT_ROOT", &root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(root.join("aggregate.csv").exists());
    assert!(!dir.path().join("out").exists());
}
