use std::path::Path;
use std::process::{Command, Output};

fn bridgekd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bridgekd"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    stderr
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{ "T": 10, "stride": 3 }"#).unwrap();
    let out = bridgekd(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path());
    let line = error_line(&out);
    assert!(line.starts_with("error[config]:"), "{line}");
    assert!(line.contains("stride"), "{line}");

    std::fs::write(&cfg, "{ \"seed\": 1,\n  \"nope\": 2 }").unwrap();
    let line = error_line(&bridgekd(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path()));
    assert!(line.starts_with("error[config]:") && line.contains("line 2"), "{line}");
}

#[test]
fn missing_inputs_are_reported_not_panicked() {
    let dir = tempfile::tempdir().unwrap();
    let line = error_line(&bridgekd(&["train-teacher"], dir.path()));
    assert!(line.starts_with("error[io]:"), "{line}");

    let bogus = dir.path().join("x.bbkd");
    std::fs::write(&bogus, b"definitely not a checkpoint").unwrap();
    let line = error_line(&bridgekd(
        &[
            "translate",
            "--checkpoint",
            bogus.to_str().unwrap(),
            "--input",
            "a.imgf",
            "--output",
            "b.imgf",
        ],
        dir.path(),
    ));
    assert!(line.starts_with("error[format]:"), "{line}");
}

#[test]
fn evaluate_scores_matching_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(
        &cfg,
        r#"{ "image_size": 16, "n_paired": 2, "n_unpaired": 0, "n_test": 1 }"#,
    )
    .unwrap();
    let out = bridgekd(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ct = dir.path().join("data/ct");
    let out = bridgekd(
        &[
            "evaluate",
            "--pred-dir",
            ct.to_str().unwrap(),
            "--truth-dir",
            ct.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.lines().next().unwrap().contains("SSIM"));
    assert!(table.contains("1.0000") && table.contains("inf"), "{table}");
    assert!(dir.path().join("report.json").exists());
}
