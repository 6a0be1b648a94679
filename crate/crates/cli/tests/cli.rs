use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::Value;

const TINY_MODEL: &str = "\
[model]
text_dim = 768
semantic_dim = 8
branch_channels = 8
d_k = 8
refine_channels = [8, 8]
numeric_dim = 8
hidden_dim = 16
dropout = 0.0
lr = 0.003
batch_size = 8
epochs = 120
patience = 120
";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_drivestyle"));
    cmd.env_remove("DRIVESTYLE_API_KEY");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn check(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!("seed = 21\n[synth]\nn_per_class = 8\nsteps = 120\n{extra}"),
    )
    .unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes and extracts a small labeled table; returns the config and features paths.
fn small_table(dir: &Path, extra: &str) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, extra);
    let data = dir.join("data");
    check(&run(&["synth", "--config", s(&cfg), "--out", s(&data)]));
    let feats = dir.join("feats");
    check(&run(&[
        "extract",
        "--config",
        s(&cfg),
        "--input",
        s(&data.join("segments")),
        "--out",
        s(&feats),
    ]));
    (cfg, feats.join("features.csv"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_is_balanced_and_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    for name in ["a", "b"] {
        check(&run(&[
            "synth",
            "--config",
            s(&cfg),
            "--out",
            s(&dir.path().join(name)),
        ]));
    }
    let files: Vec<_> = fs::read_dir(dir.path().join("a/segments"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(files.len(), 32);
    for style in ["aggressive", "assertive", "conservative", "moderate"] {
        let n = files
            .iter()
            .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with(style))
            .count();
        assert_eq!(n, 8, "{style}");
    }
    for f in &files {
        let other = dir.path().join("b/segments").join(f.file_name().unwrap());
        assert_eq!(fs::read(f).unwrap(), fs::read(other).unwrap());
    }
    let manifest = read_json(&dir.path().join("a/synth_manifest.json"));
    assert_eq!(manifest["segments"], 32);
}

#[test]
fn extract_rows_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let (_, feats) = small_table(dir.path(), "");
    let text = fs::read_to_string(&feats).unwrap();
    assert_eq!(text.lines().count(), 33);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 2 + 36);
    let meta = read_json(&feats.with_file_name("extract_meta.json"));
    assert_eq!(meta["tau"], 2.0);
    assert_eq!(meta["feature_dim"], 36);
    assert_eq!(meta["rows"], 32);
}

#[test]
fn corrupt_file_fails_until_skip_bad() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let data = dir.path().join("data");
    check(&run(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&data),
        "--n-per-class",
        "1",
    ]));
    let segs = data.join("segments");
    fs::write(segs.join("broken.csv"), "time_s,speed_mps\n0,abc\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "extract",
        "--config",
        s(&cfg),
        "--input",
        s(&segs),
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.csv"));
    assert!(!out_dir.join("features.csv").exists());

    check(&run(&[
        "extract",
        "--config",
        s(&cfg),
        "--input",
        s(&segs),
        "--out",
        s(&out_dir),
        "--skip-bad",
    ]));
    assert_eq!(
        fs::read_to_string(out_dir.join("features.csv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    let report = read_json(&out_dir.join("drop_report.json"));
    assert_eq!(report["skipped_files"].as_array().unwrap().len(), 1);
    assert_eq!(report["report"]["input_count"], 5);
}

#[test]
fn tau_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let data = dir.path().join("data");
    check(&run(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&data),
        "--n-per-class",
        "1",
    ]));
    let out_dir = dir.path().join("out");
    let segs = data.join("segments");
    check(&run(&[
        "extract",
        "--config",
        s(&cfg),
        "--input",
        s(&segs),
        "--out",
        s(&out_dir),
        "--tau",
        "3.5",
    ]));
    let meta = read_json(&out_dir.join("extract_meta.json"));
    assert_eq!(meta["tau"], 3.5);
    assert_eq!(meta["thresholds"]["brake"], 3.5);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(run(&["synth", "--out", out]).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seed = 1\nunknown_key = true\n").unwrap();
    assert_eq!(
        run(&["synth", "--config", s(&bad), "--out", out]).status.code(),
        Some(2)
    );
    fs::write(&bad, "tau = 2.0\n").unwrap();
    assert_eq!(
        run(&["synth", "--config", s(&bad), "--out", out]).status.code(),
        Some(2)
    );
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        run(&["synth", "--config", s(&missing), "--out", out]).status.code(),
        Some(2)
    );
    check(&run(&["synth", "--seed", "4", "--n-per-class", "1", "--out", out]));
}

#[test]
fn describe_offline_then_cached_and_embed() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, feats) = small_table(dir.path(), "");
    let out_dir = dir.path().join("desc");
    for pass in 0..2 {
        check(&run(&[
            "describe",
            "--config",
            s(&cfg),
            "--features",
            s(&feats),
            "--out",
            s(&out_dir),
            "--offline",
        ]));
        let meta = read_json(&out_dir.join("describe_meta.json"));
        assert_eq!(meta["rows"], 32);
        assert_eq!(meta["remote_requests"], 0);
        assert_eq!(meta["cache_hits"], if pass == 0 { 0 } else { 32 });
    }
    let lines: Vec<Value> = fs::read_to_string(out_dir.join("descriptions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 32);
    assert!(lines.iter().all(|l| !l["text"].as_str().unwrap().is_empty()));

    let desc = out_dir.join("descriptions.jsonl");
    check(&run(&[
        "embed",
        "--config",
        s(&cfg),
        "--descriptions",
        s(&desc),
        "--out",
        s(&out_dir),
        "--offline",
    ]));
    let embs: Vec<Value> = fs::read_to_string(out_dir.join("embeddings.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(embs.len(), 32);
    assert_eq!(embs[0]["values"].as_array().unwrap().len(), 768);
}

/// Minimal chat-completions endpoint counting requests.
fn chat_stub() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 0 && line != "\r\n" {
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                line.clear();
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            counter.fetch_add(1, Ordering::SeqCst);
            let reply = r#"{"choices":[{"message":{"content":"A calm and steady driver."}}]}"#;
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, hits)
}

#[test]
fn describe_remote_rerun_makes_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let (url, hits) = chat_stub();
    let extra = format!("[llm]\nendpoint = \"{url}\"\n");
    let (cfg, feats) = small_table(dir.path(), &extra);
    let out_dir = dir.path().join("desc");
    let describe = || {
        bin()
            .args([
                "describe",
                "--config",
                s(&cfg),
                "--features",
                s(&feats),
                "--out",
                s(&out_dir),
            ])
            .env("DRIVESTYLE_API_KEY", "test-key")
            .output()
            .unwrap()
    };
    check(&describe());
    assert_eq!(hits.load(Ordering::SeqCst), 32);
    check(&describe());
    assert_eq!(hits.load(Ordering::SeqCst), 32);
    assert_eq!(read_json(&out_dir.join("describe_meta.json"))["remote_requests"], 0);
    let cached = fs::read_to_string(out_dir.join("descriptions.jsonl")).unwrap();
    assert!(cached.lines().all(|l| l.contains("\"source\":\"cache\"")));
    for entry in walk(dir.path()) {
        let bytes = fs::read(&entry).unwrap();
        assert!(
            !String::from_utf8_lossy(&bytes).contains("test-key"),
            "{}",
            entry.display()
        );
    }

    // Forcing offline never touches the endpoint.
    let off = dir.path().join("offline");
    check(&run(&[
        "describe",
        "--config",
        s(&cfg),
        "--features",
        s(&feats),
        "--out",
        s(&off),
        "--offline",
    ]));
    assert_eq!(hits.load(Ordering::SeqCst), 32);
    let text = fs::read_to_string(off.join("descriptions.jsonl")).unwrap();
    assert!(text.lines().all(|l| l.contains("\"source\":\"fallback\"")));
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn unreachable_endpoint_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let extra = format!(
        "[llm]\nendpoint = \"http://127.0.0.1:{port}/v1\"\n[llm.retry]\nmax_attempts = 1\nbase_delay_ms = 1\nmax_delay_ms = 1\ntimeout_ms = 2000\n"
    );
    let (cfg, feats) = small_table(dir.path(), &extra);
    let out = bin()
        .args([
            "describe",
            "--config",
            s(&cfg),
            "--features",
            s(&feats),
            "--out",
            s(&dir.path().join("d")),
        ])
        .env("DRIVESTYLE_API_KEY", "k")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_eval_memorized_train_split() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, feats) = small_table(dir.path(), TINY_MODEL);
    let out_dir = dir.path().join("model");
    let args = [
        "--config",
        s(&cfg),
        "--features",
        s(&feats),
        "--out",
        s(&out_dir),
        "--offline",
    ];
    check(&bin().arg("train").args(args).arg("--select-on-train").output().unwrap());
    for f in [
        "model.ckpt",
        "train_log.jsonl",
        "train_summary.json",
        "split.json",
        "run.jsonl",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let summary = read_json(&out_dir.join("train_summary.json"));
    assert_eq!(summary["best_val_accuracy"], 1.0, "{summary}");
    let ckpt = out_dir.join("model.ckpt");
    let eval = |split: &str| {
        let out = bin()
            .args(["eval", "--checkpoint", s(&ckpt), "--split", split])
            .args(args)
            .output()
            .unwrap();
        check(&out);
        read_json(&out_dir.join("metrics.json"))
    };
    let m = eval("train");
    assert_eq!(m["accuracy"], 1.0);
    assert_eq!(m["recall"], m["accuracy"]);
    let m = eval("all");
    assert_eq!(m["confusion"]["matrix"].as_array().unwrap().len(), 4);

    let bad = dir.path().join("bad.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&bad, bytes).unwrap();
    let out = bin()
        .args(["eval", "--checkpoint", s(&bad)])
        .args(args)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ablate_emits_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, feats) = small_table(dir.path(), &TINY_MODEL.replace("epochs = 120", "epochs = 2"));
    let out_dir = dir.path().join("abl");
    check(&run(&[
        "ablate",
        "--config",
        s(&cfg),
        "--features",
        s(&feats),
        "--out",
        s(&out_dir),
        "--offline",
    ]));
    let table = fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "Full Model",
            "w/o Spatio-Temp Attn.",
            "w/o Multi-Scale Conv.",
            "Text Features Only",
            "Num. Features Only"
        ]
    );
    assert_eq!(
        fs::read_to_string(out_dir.join("ablation_weighted.csv"))
            .unwrap()
            .lines()
            .count(),
        6
    );
    let metrics = read_json(&out_dir.join("ablation_metrics.json"));
    assert_eq!(metrics.as_array().unwrap().len(), 5);
}

#[test]
fn nonfinite_features_exit_with_code_5() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, feats) = small_table(dir.path(), TINY_MODEL);
    let text = fs::read_to_string(&feats).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(str::to_string).collect();
    cells[5] = "inf".into();
    lines[3] = cells.join(",");
    let poisoned = dir.path().join("poisoned.csv");
    fs::write(&poisoned, lines.join("\n") + "\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        s(&cfg),
        "--features",
        s(&poisoned),
        "--out",
        s(&dir.path().join("m")),
        "--offline",
    ]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_writes_correlation_and_kde() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, feats) = small_table(dir.path(), "");
    let out_dir = dir.path().join("rep");
    check(&run(&[
        "report",
        "--config",
        s(&cfg),
        "--features",
        s(&feats),
        "--out",
        s(&out_dir),
    ]));
    let corr = fs::read_to_string(out_dir.join("correlation.csv")).unwrap();
    assert_eq!(corr.lines().count(), 37);
    let kde = fs::read_to_string(out_dir.join("kde.csv")).unwrap();
    assert!(kde.lines().count() > 200);
    let out = run(&[
        "report",
        "--config",
        s(&cfg),
        "--features",
        s(&feats),
        "--out",
        s(&out_dir),
        "--feature",
        "nope",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
