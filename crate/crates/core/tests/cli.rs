use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsc"))
        .args(args)
        .env("WSC_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn golden(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

const SMALL: [&str; 8] = [
    "--set",
    "data.size=300",
    "--set",
    "experiment.epochs=2",
    "--set",
    "model.proj_dim=16",
    "--set",
    "experiment.linear_probe=false",
];

#[test]
fn convert_matches_golden_file() {
    let out = wsc(&["convert", &golden("reports.jsonl")]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(out.stdout, fs::read(golden("labels.jsonl")).unwrap());
}

#[test]
fn convert_empty_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = wsc(&["convert", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn convert_isolates_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("mixed.jsonl");
    fs::write(&input, "{\"id\":\"a\",\"text\":\"白内障\"}\nnot json\n{\"id\":\"c\",\"text\":\"出血\"}\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = wsc(&["convert", input.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("converted 2, failed 1"), "{err}");
    assert_eq!(fs::read_to_string(out_dir.join("labels.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn gradcheck_default_passes() {
    let out = wsc(&["gradcheck"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{text}");
    assert!(text.contains("PASS") && text.contains("threshold 1e-6"), "{text}");
}

#[test]
fn gendata_writes_records_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let res = wsc(&["gendata", "--out", out.to_str().unwrap(), "--seed", "3", "--set", "data.size=50"]);
    assert!(res.status.success());
    assert_eq!(fs::read_to_string(out.join("data.jsonl")).unwrap().lines().count(), 50);
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["data"]["seed"], 3);
    assert_eq!(cfg["data"]["size"], 50);
}

#[test]
fn train_is_deterministic_and_eval_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--seed", "5", "--out", out.to_str().unwrap()];
        args.extend(SMALL);
        let res = wsc(&args);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["metrics.jsonl", "summary.csv", "checkpoint.json", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 5"), "{manifest}");

    let ckpt = a.join("checkpoint.json");
    let res = wsc(&["eval", "--config", a.join("config.json").to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let m: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let last = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(last.lines().last().unwrap()).unwrap();
    assert_eq!(m["zero_shot_auc"], last["zero_shot_auc"]);
    assert_eq!(m["recall_at_1"], last["recall_at_1"]);
}

#[test]
fn sweep_writes_one_directory_per_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let mut args = vec![
        "sweep",
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "experiment.variants=[\"Baseline\",\"SA\"]",
        "--set",
        "experiment.epochs=1",
        "--set",
        "data.size=200",
    ];
    args.extend(&SMALL[4..6]);
    let res = wsc(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for t in ["0.050", "0.075", "0.100", "0.125", "0.150"] {
        let d = out.join(format!("mle_{t}"));
        assert!(d.join("seed0_baseline/metrics.jsonl").exists(), "{t}");
        assert!(d.join("seed0_SA/manifest.json").exists(), "{t}");
    }
    let rows = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 5 * 2);
    assert!(out.join("config.json").exists());
}

#[test]
fn bad_override_fails() {
    let res = wsc(&["train", "--set", "optimizer.nope=1"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("unknown config key"));
}
