use std::path::Path;
use std::process::{Command, Output};

use gridprobe_mock::{MockReply, MockServer};
use serde_json::Value;

fn gridprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridprobe"))
        .args(args)
        .current_dir(cwd)
        .env("GRIDPROBE_LOG", "info")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
}

fn one_hot_manifest(dir: &Path) {
    let out = gridprobe(
        &[
            "episode",
            "--regime",
            "localized",
            "--atoms",
            "1",
            "--seed",
            "5",
            "--out",
            "ep.json",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    std::fs::write(
        dir.join("m.json"),
        r#"{"id": "one-hot", "episode": "ep.json"}"#,
    )
    .unwrap();
}

#[test]
fn one_hot_episode_selects_one_frame() {
    let dir = tempfile::tempdir().unwrap();
    one_hot_manifest(dir.path());
    let out = gridprobe(
        &["run", "--manifest", "m.json", "--out", "traces"],
        dir.path(),
    );
    assert!(out.status.success());
    let line = stdout(&out);
    assert_eq!(
        line.lines().count(),
        1,
        "stdout carries only the summary: {line}"
    );
    assert_eq!(field(&line, "m_eff"), Some("1"));
    assert_eq!(field(&line, "correct"), Some("true"));
    assert!(field(&line, "sigma").is_some() && field(&line, "total_flops").is_some());

    let trace: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("traces/trace-one-hot.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(trace["schema_version"], 1);
    assert_eq!(trace["m_eff"], 1);
    assert_eq!(trace["probes"].as_array().unwrap().len(), 24);
    // logs went to stderr
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn monolithic_mode_uses_whole_pool() {
    let dir = tempfile::tempdir().unwrap();
    one_hot_manifest(dir.path());
    let out = gridprobe(
        &["run", "--manifest", "m.json", "--mode", "monolithic"],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(field(&stdout(&out), "m_eff"), Some("144"));
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    one_hot_manifest(dir.path());
    std::fs::write(dir.path().join("cfg.json"), r#"{"mode": "fixed:5"}"#).unwrap();
    let out = gridprobe(
        &["run", "--manifest", "m.json", "--config", "cfg.json"],
        dir.path(),
    );
    assert_eq!(field(&stdout(&out), "m_eff"), Some("5"));
    let out = gridprobe(
        &[
            "run",
            "--manifest",
            "m.json",
            "--config",
            "cfg.json",
            "--mode",
            "fixed:7",
        ],
        dir.path(),
    );
    assert_eq!(field(&stdout(&out), "m_eff"), Some("7"));
    let out = gridprobe(&["run", "--manifest", "m.json", "--k", "6"], dir.path());
    assert_eq!(out.status.code(), Some(2), "K conflicts with the episode");
}

#[test]
fn missing_frame_directory_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("m.json"),
        r#"{"question": "q?", "labels": ["A", "B"], "frames": "absent"}"#,
    )
    .unwrap();
    let out = gridprobe(&["run", "--manifest", "m.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).is_empty());
}

#[test]
fn empty_suite_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("s.json"),
        r#"{"schema_version": 1, "entries": []}"#,
    )
    .unwrap();
    let out = gridprobe(&["bench", "--suite", "s.json", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("r").exists());
}

#[test]
fn bench_writes_one_pareto_row_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("s.json"),
        r#"{"schema_version": 1, "k": 6, "entries": [
            {"spec": {"regime": "localized"}, "count": 4},
            {"spec": {"regime": "redundant"}, "count": 4, "seed_start": 100},
            {"spec": {"regime": "holistic"}, "count": 4, "seed_start": 200}]}"#,
    )
    .unwrap();
    let args = [
        "bench",
        "--suite",
        "s.json",
        "--strategies",
        "auto,fixed:8,monolithic,uniform",
    ];
    let out = gridprobe(
        &[&args[..], &["--out", "a", "--traces"]].concat(),
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout(&out).lines().count(), 4);
    let pareto = std::fs::read_to_string(dir.path().join("a/pareto.csv")).unwrap();
    assert_eq!(pareto.lines().count(), 5, "{pareto}");
    for f in [
        "report.json",
        "skew_buckets.csv",
        "regime_localized.csv",
        "regime_holistic.csv",
    ] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    let traces = std::fs::read_to_string(dir.path().join("a/traces.jsonl")).unwrap();
    assert_eq!(traces.lines().count(), 48);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["k"], 6);

    let out = gridprobe(&[&args[..], &["--out", "b"]].concat(), dir.path());
    assert!(out.status.success());
    for f in ["report.json", "pareto.csv", "skew_buckets.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f} differs between identical runs"
        );
    }
}

fn write_frames(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = image::RgbImage::from_pixel(20, 12, image::Rgb([(i * 10) as u8, 40, 200]));
        img.save(dir.join(format!("frame_{i:03}.png"))).unwrap();
    }
}

fn frames_manifest(dir: &Path) {
    write_frames(&dir.join("frames"), 30);
    std::fs::write(
        dir.join("m.json"),
        r#"{"id": "clip", "question": "What colour is the car?", "labels": ["A", "B", "C", "D"],
            "truth": "A", "frames": "frames"}"#,
    )
    .unwrap();
}

#[test]
fn frame_directory_against_remote_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    frames_manifest(dir.path());
    let selector = MockServer::start();
    let qa = MockServer::start();
    let out = gridprobe(
        &[
            "run",
            "--manifest",
            "m.json",
            "--k",
            "3",
            "--probe-res",
            "32x32",
            "--focused-res",
            "48x48",
            "--selector-endpoint",
            &selector.url(),
            "--selector-model",
            "probe-2b",
            "--qa-endpoint",
            &qa.url(),
            "--qa-model",
            "qa-8b",
            "--parallel",
            "3",
            "--out",
            "t",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(field(&stdout(&out), "answer"), Some("A"));
    let probes = selector.requests();
    assert_eq!(probes.len(), 6);
    assert!(probes
        .iter()
        .all(|r| r.image_count() == 3 && r.model() == Some("probe-2b")));
    assert_eq!(qa.requests().len(), 1);
    assert_eq!(qa.requests()[0].model(), Some("qa-8b"));

    let trace: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("t/trace-clip.json")).unwrap(),
    )
    .unwrap();
    assert!(trace["selector_backend"]
        .as_str()
        .unwrap()
        .contains("probe-2b"));
    assert!(trace["qa_backend"].as_str().unwrap().contains("qa-8b"));
}

#[test]
fn remote_failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    frames_manifest(dir.path());
    let run = |server: &MockServer| {
        gridprobe(
            &[
                "run",
                "--manifest",
                "m.json",
                "--k",
                "2",
                "--probe-res",
                "16x16",
                "--selector-endpoint",
                &server.url(),
                "--qa-endpoint",
                &server.url(),
                "--retries",
                "1",
                "--out",
                "t",
            ],
            dir.path(),
        )
    };
    let unscorable = MockServer::with_default(MockReply::letters(&[("Sorry", 1.0)]));
    let out = run(&unscorable);
    assert_eq!(out.status.code(), Some(4));
    let trace: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("t/trace-clip.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(trace["failure"]["kind"], "unscorable");

    let down = MockServer::with_default(MockReply::status(503, "overloaded"));
    assert_eq!(run(&down).status.code(), Some(3));
    assert_eq!(down.requests().len(), 2, "one retry then give up");

    let rejected = MockServer::with_default(MockReply::status(401, "bad key"));
    assert_eq!(run(&rejected).status.code(), Some(3));
}

#[test]
fn frames_without_remote_backend_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    frames_manifest(dir.path());
    let out = gridprobe(&["run", "--manifest", "m.json", "--k", "2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
