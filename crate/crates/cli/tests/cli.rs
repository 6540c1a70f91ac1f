use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reasonseg"))
        .args(args)
        .env_remove("RUST_LOG")
        .env_remove("REASONSEG_MIN_IMAGE_SIDE")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn curate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "curate".to_string(),
        "--input".into(),
        p(&fixtures().join("coco.json")),
        "--task".into(),
        "qa".into(),
        "--out".into(),
        p(&dir.join("jobs.jsonl")),
        "--dropped".into(),
        p(&dir.join("dropped.jsonl")),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&refs)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["evaluate", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["transform", "--to", "nonsense"]).status.code(), Some(1));
}

#[test]
fn missing_input_exits_two() {
    let out = run(&["report", "--in", "/nonexistent/report.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/report.json"));
}

#[test]
fn curate_without_client_writes_prompts_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = curate(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let jobs = std::fs::read_to_string(dir.path().join("jobs.jsonl")).unwrap();
    assert_eq!(jobs.lines().count(), 3);
    assert!(jobs.contains("You are asked to generate the Q&A conversational data."));
    assert!(!jobs.contains("\"response\""));
    let dropped = std::fs::read_to_string(dir.path().join("dropped.jsonl")).unwrap();
    assert!(dropped.contains("image below 512x512"));
    assert!(dropped.contains("object area under 400 square pixels"));
}

#[test]
fn flag_beats_env_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, "min_image_side = 600\n").unwrap();
    let kept = |out: &Output| {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(dir.path().join("jobs.jsonl")).unwrap().lines().count()
    };
    // config alone: only the 700x700 image survives
    let out = curate(dir.path(), &["--config", &p(&config)]);
    assert_eq!(kept(&out), 1);
    // environment overrides the config
    let mut args: Vec<String> = vec!["curate".into(), "--input".into(), p(&fixtures().join("coco.json"))];
    args.extend(["--task", "qa", "--out"].map(String::from));
    args.push(p(&dir.path().join("jobs.jsonl")));
    args.extend(["--config".to_string(), p(&config)]);
    let env_out = Command::new(env!("CARGO_BIN_EXE_reasonseg"))
        .args(&args)
        .env("REASONSEG_MIN_IMAGE_SIDE", "100")
        .output()
        .unwrap();
    assert_eq!(kept(&env_out), 4);
    // the flag overrides both
    let flag_out = Command::new(env!("CARGO_BIN_EXE_reasonseg"))
        .args(&args)
        .args(["--min-image-side", "512"])
        .env("REASONSEG_MIN_IMAGE_SIDE", "100")
        .output()
        .unwrap();
    assert_eq!(kept(&flag_out), 3);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, "min_side = 3\n").unwrap();
    assert_eq!(curate(dir.path(), &["--config", &p(&config)]).status.code(), Some(1));
}

#[test]
fn unreachable_model_marks_jobs_failed_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let out = curate(
        dir.path(),
        &["--client", "http", "--endpoint", "http://127.0.0.1:9/v1/chat/completions", "--retries", "1"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let jobs = std::fs::read_to_string(dir.path().join("jobs.jsonl")).unwrap();
    for line in jobs.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["attempts"], 2);
        assert!(v["error"].is_string());
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("(3 failed)"));
}

#[test]
fn incompatible_transform_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.jsonl");
    let out = run(&[
        "parse",
        "--responses",
        &p(&fixtures().join("responses/qa")),
        "--annotations",
        &p(&fixtures().join("coco.json")),
        "--task",
        "qa",
        "--out",
        &p(&records),
    ]);
    assert!(out.status.success());
    let out = run(&["transform", "--in", &p(&records), "--to", "instseg", "--out", &p(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sid_instseg"));
    let out = run(&["transform", "--in", &p(&records), "--to", "sid-semseg", "--out", &p(&dir.path().join("y.jsonl"))]);
    assert_eq!(out.status.code(), Some(1), "semantic targets need annotations");
}

#[test]
fn evaluate_rejects_predictions_for_unknown_images() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds.jsonl");
    std::fs::write(&preds, "{\"image_id\":77,\"category_id\":17,\"polygon\":[[0,0,9,0,9,9]]}\n").unwrap();
    let out = run(&["evaluate", "--gt", &p(&fixtures().join("coco.json")), "--predictions", &p(&preds)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("77"));
}

#[test]
fn report_renders_saved_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "evaluate",
        "--gt",
        &p(&fixtures().join("coco.json")),
        "--predictions",
        &p(&fixtures().join("predictions.jsonl")),
        "--out",
        &p(&report),
    ]);
    assert!(out.status.success());
    let printed = run(&["report", "--in", &p(&report)]);
    assert_eq!(printed.stdout, out.stdout);
    let header = String::from_utf8_lossy(&printed.stdout).lines().next().unwrap().to_string();
    let order: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(order, ["category", "AP50", "AP75", "mAP", "AP-small", "AP-medium", "AP-large"]);
}
