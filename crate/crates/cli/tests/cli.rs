use std::path::Path;
use std::process::{Command, Output};

fn pmri(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmri"))
        .current_dir(dir)
        .args(["--rows", "32", "--cols", "32", "--coils", "2"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pipeline_of_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&pmri(d, &["simulate", "--first-seed", "0", "--count", "2", "--out", "data"]));
    assert!(d.join("data/sample_1.ksp").exists());
    ok(&pmri(d, &["mask-gen", "--mask-seed", "4", "--out", "m.mask"]));
    ok(&pmri(d, &["--clear-outer", "2", "recon-clear", "--input", "data/sample_0", "--out", "clear.c64"]));
    let small = ["--k", "1", "--epochs", "1", "--seg-epochs", "1", "--e2e-epochs", "1", "--batch-size", "2"];
    ok(&pmri(d, &[&small[..], &["train-dslr", "--data", "data", "--out", "dslr.ckpt"]].concat()));
    ok(&pmri(d, &["recon-dslr", "--model", "dslr.ckpt", "--input", "data/sample_0", "--out", "dslr.c64"]));
    ok(&pmri(d, &[&small[..], &["train-e2e", "--data", "data", "--recon-model", "dslr.ckpt", "--out", "e2e"]].concat()));
    ok(&pmri(d, &["segment", "--recon", "dslr.c64", "--model", "e2e/seg.ckpt", "--out", "seg.labels"]));
    ok(&pmri(d, &["segment", "--recon", "clear.c64", "--out", "km.labels"]));
    let o = pmri(d, &["evaluate", "--recon", "clear.c64", "--labels", "km.labels", "--sample", "data/sample_0", "--method", "CLEAR"]);
    ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,accel,snr_db,dice_csf,dice_gm,dice_wm,runtime_s"));
    let cells: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(cells[0], "CLEAR");
    assert!(cells[2].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn run_writes_metrics_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"mask": {"acceleration": 1.0}, "methods": ["US"], "splits": {"train": {"count": 0, "first_seed": 0}, "val": {"count": 0, "first_seed": 0}, "test": {"count": 1, "first_seed": 9}}}"#,
    )
    .unwrap();
    let o = pmri(d, &["--config", "cfg.json", "--output-dir", "out", "run"]);
    ok(&o);
    let csv = std::fs::read_to_string(d.join("out/metrics.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("US,1,99,"), "{csv}");
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.json"), r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(pmri(d, &["--config", "bad.json", "run"]).status.code(), Some(2));
    assert_eq!(pmri(d, &["--acceleration", "3", "run"]).status.code(), Some(2));
    assert_eq!(pmri(d, &["recon-clear", "--input", "missing/sample_0", "--out", "x.c64"]).status.code(), Some(4));
    std::fs::write(d.join("junk.c64"), b"junk").unwrap();
    assert_eq!(pmri(d, &["segment", "--recon", "junk.c64", "--out", "l.labels"]).status.code(), Some(4));
    assert_eq!(pmri(d, &["no-such-command"]).status.code(), Some(2));
}
