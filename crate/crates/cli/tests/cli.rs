use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo")
}

/// Copies the demo inputs into a scratch dir with run output kept inside it.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["raw_mcq.jsonl", "corpus.jsonl"] {
        fs::copy(demo_dir().join(f), dir.path().join(f)).unwrap();
    }
    let cfg = fs::read_to_string(demo_dir().join("offline.toml"))
        .unwrap()
        .replace("run_dir = \"../../runs/demo\"", "run_dir = \"runs\"");
    fs::write(dir.path().join("offline.toml"), cfg).unwrap();
    dir
}

fn consult(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_consult")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn digest_line(o: &Output) -> String {
    let out = String::from_utf8_lossy(&o.stdout);
    let line = out.lines().find(|l| l.contains("report digest")).unwrap().to_string();
    line.rsplit(' ').next().unwrap().to_string()
}

#[test]
fn build_matches_checked_in_corpus() {
    let ws = workspace();
    let cfg = ws.path().join("offline.toml");
    let out_path = ws.path().join("rebuilt.jsonl");
    let golden = ws.path().join("golden.jsonl");
    let o = consult(&[
        "build", "--config", cfg.to_str().unwrap(), "--offline",
        "--out", out_path.to_str().unwrap(), "--golden", golden.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(fs::read_to_string(&out_path).unwrap(), fs::read_to_string(demo_dir().join("corpus.jsonl")).unwrap());
    assert_eq!(fs::read_to_string(golden).unwrap().lines().count(), 3);
    assert!(ws.path().join("rebuilt.stats.json").exists());
}

#[test]
fn build_reports_unsplittable_question() {
    let ws = workspace();
    let raw = ws.path().join("bad.jsonl");
    fs::write(&raw, r#"{"id":"solo","stem":"Which drug is first line?","options":["a","b"],"answer":"A"}"#).unwrap();
    let cfg = ws.path().join("offline.toml");
    let o = consult(&[
        "build", "--config", cfg.to_str().unwrap(), "--offline",
        "--raw", raw.to_str().unwrap(), "--out", ws.path().join("x.jsonl").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let t = text(&o);
    assert!(t.contains("solo") && t.contains("no informational part"), "{t}");
}

#[test]
fn offline_run_resume_and_replay() {
    let ws = workspace();
    let cfg = ws.path().join("offline.toml");
    let run_dir = ws.path().join("r1");
    let args = ["run", "--config", cfg.to_str().unwrap(), "--offline", "--run-dir", run_dir.to_str().unwrap()];
    let first = consult(&args);
    assert!(first.status.success(), "{}", text(&first));
    let t = text(&first);
    assert!(t.contains("network calls: 0"), "{t}");
    assert!(t.contains("3 executed"), "{t}");
    assert!(t.contains("oracle-direct"), "{t}");

    let mut again = args.to_vec();
    again.push("--replay");
    let second = consult(&again);
    assert!(second.status.success(), "{}", text(&second));
    assert!(text(&second).contains("0 executed, 3 resumed"));
    assert_eq!(digest_line(&first), digest_line(&second));

    let analyze = consult(&["analyze", run_dir.to_str().unwrap(), "--offline"]);
    assert!(analyze.status.success(), "{}", text(&analyze));
    let curve = fs::read_to_string(run_dir.join("curve.jsonl")).unwrap();
    assert_eq!(curve.lines().count(), 5);
    assert!(run_dir.join("bins.json").exists());

    let report = consult(&["report", run_dir.to_str().unwrap()]);
    assert!(report.status.success());
    assert!(text(&report).contains(&digest_line(&first)));
}

#[test]
fn lower_bound_run_has_no_dialogue_metrics() {
    let ws = workspace();
    let cfg = ws.path().join("offline.toml");
    let o = consult(&["run", "--config", cfg.to_str().unwrap(), "--offline", "--mode", "lower"]);
    assert!(o.status.success(), "{}", text(&o));
    let out = String::from_utf8_lossy(&o.stdout).to_string();
    let row = out.lines().find(|l| l.starts_with("Lower-B")).unwrap();
    assert!(row.split_whitespace().filter(|c| *c == "-").count() >= 6, "{out}");
    assert!(ws.path().join("runs/lower-b/report.json").exists());
    assert!(!ws.path().join("runs/lower-b/transcripts.jsonl").exists());
}

#[test]
fn config_errors_abort_before_running() {
    let ws = workspace();
    let cfg = ws.path().join("offline.toml");
    let bad = ws.path().join("bad.toml");
    let mut text_cfg = fs::read_to_string(&cfg).unwrap();
    text_cfg = text_cfg.replace("percentages = [0.2, 0.4, 0.6, 0.8, 1.0]", "percentages = [0.0, 1.5]");
    fs::write(&bad, text_cfg).unwrap();
    let o = consult(&["run", "--config", bad.to_str().unwrap(), "--offline"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(!ws.path().join("runs").exists());

    let o = consult(&["run", "--config", cfg.to_str().unwrap(), "--offline", "--max-turns", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = consult(&["run", "--config", ws.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn offline_flag_refuses_model_agents() {
    let ws = workspace();
    let llm = fs::read_to_string(demo_dir().join("llm.example.toml")).unwrap();
    let path = ws.path().join("llm.toml");
    fs::write(&path, llm).unwrap();
    let o = consult(&["run", "--config", path.to_str().unwrap(), "--offline"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
}
