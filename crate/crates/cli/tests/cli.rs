use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BUNDLED: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/synthetic_corpus.jsonl");

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_promptpress"));
    cmd.env_remove("PROMPTPRESS_API_KEY");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn lines(path: impl AsRef<Path>) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn first_docs(dir: &Path, n: usize) -> PathBuf {
    let text = std::fs::read_to_string(BUNDLED).unwrap();
    let path = dir.join("docs.jsonl");
    let head: Vec<&str> = text.lines().take(n).collect();
    std::fs::write(&path, head.join("\n") + "\n").unwrap();
    path
}

fn pipeline(dir: &Path) {
    ok(
        dir,
        &[
            "distill",
            "--transport",
            "mock",
            "--input",
            BUNDLED,
            "--output",
            "pairs.jsonl",
        ],
    );
    ok(dir, &["annotate", "--input", "pairs.jsonl", "--output", "ann.jsonl"]);
    ok(
        dir,
        &[
            "qc",
            "--pairs",
            "pairs.jsonl",
            "--annotations",
            "ann.jsonl",
            "--output",
            "reports.jsonl",
            "--kept",
            "kept.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "train",
            "--input",
            "kept.jsonl",
            "--model",
            "model.json",
            "--epochs",
            "3",
        ],
    );
    ok(
        dir,
        &[
            "score",
            "--input",
            BUNDLED,
            "--model",
            "model.json",
            "--output",
            "scores.jsonl",
        ],
    );
    ok(
        dir,
        &[
            "compress",
            "--input",
            BUNDLED,
            "--scores",
            "scores.jsonl",
            "--output",
            "results.jsonl",
            "--rate",
            "0.5",
        ],
    );
    ok(
        dir,
        &[
            "stats",
            "--pairs",
            "pairs.jsonl",
            "--reports",
            "reports.jsonl",
            "--results",
            "results.jsonl",
            "--output",
            "stats.csv",
        ],
    );
}

#[test]
fn full_pipeline_on_bundled_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);

    let pairs = lines(d.join("pairs.jsonl"));
    assert_eq!(pairs.len(), 100);
    let reports = lines(d.join("reports.jsonl"));
    assert_eq!(reports.len(), 100);
    // 5 dropped by variation rate, then ceil(0.1 * 95) = 10 by alignment gap.
    let kept = reports.iter().filter(|r| r["kept"] == true).count();
    assert_eq!(kept, 85);
    assert_eq!(lines(d.join("kept.jsonl")).len(), 85);

    let model: Value = serde_json::from_str(&std::fs::read_to_string(d.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["dim"], 9);
    assert_eq!(model["W"].as_array().unwrap().len(), 18);

    let results = lines(d.join("results.jsonl"));
    assert_eq!(results.len(), 100);
    for r in &results {
        let ratio = r["achieved_ratio"].as_f64().unwrap();
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    let csv = std::fs::read_to_string(d.join("stats.csv")).unwrap();
    assert!(csv.starts_with("stage,metric,value\n"));
    assert!(csv.contains("distill,documents,100\n"));
    assert!(csv.contains("qc,kept,85\n"));
    assert!(csv.contains("qc,vr_hist_0.00_0.05,"));
    assert!(csv.contains("compress,documents,100\n"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for file in [
        "pairs.jsonl",
        "ann.jsonl",
        "reports.jsonl",
        "model.json",
        "scores.jsonl",
        "results.jsonl",
        "stats.csv",
    ] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }
}

#[test]
fn qc_keeps_seventeen_of_twenty() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let docs = first_docs(d, 20);
    let docs = docs.to_str().unwrap();
    ok(
        d,
        &[
            "distill",
            "--transport",
            "mock",
            "--input",
            docs,
            "--output",
            "pairs.jsonl",
        ],
    );
    ok(d, &["annotate", "--input", "pairs.jsonl", "--output", "ann.jsonl"]);
    ok(
        d,
        &[
            "qc",
            "--pairs",
            "pairs.jsonl",
            "--annotations",
            "ann.jsonl",
            "--output",
            "reports.jsonl",
        ],
    );
    let reports = lines(d.join("reports.jsonl"));
    assert_eq!(reports.len(), 20);
    assert_eq!(reports.iter().filter(|r| r["kept"] == true).count(), 17);
    for r in &reports {
        let ag = r["ag"].as_f64().unwrap();
        let gap = r["hr"].as_f64().unwrap() - r["mr"].as_f64().unwrap();
        assert!((ag - gap).abs() < 1e-12);
    }
}

#[test]
fn compress_at_half_rate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("docs.jsonl"),
        "{\"doc_id\":\"a\",\"text\":\"one two three four\"}\n{\"doc_id\":\"b\",\"words\":[\"x\",\"y\",\"z\"]}\n",
    )
    .unwrap();
    std::fs::write(
        d.join("scores.jsonl"),
        "{\"doc_id\":\"a\",\"probs\":[0.1,0.9,0.2,0.8]}\n{\"doc_id\":\"b\",\"probs\":[0.5,0.5,0.1]}\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "compress",
            "--input",
            "docs.jsonl",
            "--scores",
            "scores.jsonl",
            "--output",
            "out.jsonl",
            "--rate",
            "0.5",
        ],
    );
    let out = lines(d.join("out.jsonl"));
    assert_eq!(out[0]["kept_indices"], serde_json::json!([1, 3]));
    assert_eq!(out[0]["compressed"], "two four");
    assert_eq!(out[0]["achieved_ratio"], 2.0);
    // round(1.5) = 2; the tie at 0.5 goes to the earlier word.
    assert_eq!(out[1]["kept_indices"], serde_json::json!([0, 1]));
    assert_eq!(out[1]["compressed"], "x y");

    ok(
        d,
        &[
            "compress",
            "--input",
            "docs.jsonl",
            "--scores",
            "scores.jsonl",
            "--output",
            "dyn.jsonl",
            "--rate",
            "0.5",
            "--dynamic",
        ],
    );
    let out = lines(d.join("dyn.jsonl"));
    // ceil(0.5 * 7) = 4 words; the fourth highest is 0.5.
    assert_eq!(out[0]["kept_indices"], serde_json::json!([1, 3]));
    assert_eq!(out[1]["kept_indices"], serde_json::json!([0, 1]));

    ok(
        d,
        &[
            "compress",
            "--input",
            "docs.jsonl",
            "--scores",
            "scores.jsonl",
            "--output",
            "t.jsonl",
            "--target-tokens",
            "1",
        ],
    );
    let out = lines(d.join("t.jsonl"));
    assert_eq!(out[0]["compressed"], "two");
    assert_eq!(out[1]["compressed"], "x");
}

#[test]
fn external_subword_scores_are_aggregated() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("docs.jsonl"),
        "{\"doc_id\":\"a\",\"words\":[\"un\",\"believable\"]}\n",
    )
    .unwrap();
    std::fs::write(
        d.join("ext.jsonl"),
        "{\"doc_id\":\"a\",\"probs\":[0.2,0.4,0.6],\"subword_map\":[[0],[1,2]]}\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "score",
            "--input",
            "docs.jsonl",
            "--external",
            "ext.jsonl",
            "--output",
            "s.jsonl",
        ],
    );
    let out = lines(d.join("s.jsonl"));
    assert_eq!(out[0]["probs"].as_array().unwrap().len(), 2);

    let bad = run(
        d,
        &[
            "compress",
            "--input",
            "docs.jsonl",
            "--scores",
            "ext.jsonl",
            "--output",
            "o.jsonl",
            "--rate",
            "0.5",
        ],
    );
    assert_eq!(bad.status.code(), Some(4));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let missing = run(d, &["annotate", "--input", "nope.jsonl", "--output", "x.jsonl"]);
    assert_eq!(missing.status.code(), Some(3));

    std::fs::write(
        d.join("bad.jsonl"),
        "{\"doc_id\":\"a\",\"text\":\"fine.\"}\n{not json\n",
    )
    .unwrap();
    let malformed = run(
        d,
        &[
            "distill",
            "--transport",
            "mock",
            "--input",
            "bad.jsonl",
            "--output",
            "x.jsonl",
        ],
    );
    assert_eq!(malformed.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&malformed.stderr).contains("bad.jsonl:2:"));

    std::fs::write(
        d.join("pairs.jsonl"),
        "{\"doc_id\":\"a\",\"original\":\"a b\",\"compressed\":\"a\",\"chunk_boundaries\":[0,3]}\n",
    )
    .unwrap();
    let odd_window = run(
        d,
        &[
            "annotate",
            "--input",
            "pairs.jsonl",
            "--output",
            "x.jsonl",
            "--window",
            "3",
        ],
    );
    assert_eq!(odd_window.status.code(), Some(5));

    let usage = run(d, &["compress", "--rate", "0.5"]);
    assert_eq!(usage.status.code(), Some(2));

    let bad_rate = run(
        d,
        &[
            "compress",
            "--input",
            "pairs.jsonl",
            "--scores",
            "pairs.jsonl",
            "--output",
            "x.jsonl",
        ],
    );
    assert_ne!(bad_rate.status.code(), Some(0));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let docs = first_docs(d, 10);
    let docs = docs.to_str().unwrap();
    ok(
        d,
        &[
            "distill",
            "--transport",
            "mock",
            "--input",
            docs,
            "--output",
            "pairs.jsonl",
        ],
    );

    std::fs::write(d.join("odd.cfg"), "# bad window\nwindow = 7\n").unwrap();
    let from_config = run(
        d,
        &[
            "--config",
            "odd.cfg",
            "annotate",
            "--input",
            "pairs.jsonl",
            "--output",
            "a.jsonl",
        ],
    );
    assert_eq!(from_config.status.code(), Some(5));
    ok(
        d,
        &[
            "--config",
            "odd.cfg",
            "annotate",
            "--input",
            "pairs.jsonl",
            "--output",
            "a.jsonl",
            "--window",
            "20",
        ],
    );

    std::fs::write(d.join("unknown.cfg"), "colour = blue\n").unwrap();
    let unknown = run(
        d,
        &[
            "--config",
            "unknown.cfg",
            "annotate",
            "--input",
            "pairs.jsonl",
            "--output",
            "a.jsonl",
        ],
    );
    assert_eq!(unknown.status.code(), Some(5));

    std::fs::write(d.join("qc.cfg"), "vr_drop = 0.5\nag_drop = 0.0\n").unwrap();
    ok(
        d,
        &[
            "--config",
            "qc.cfg",
            "qc",
            "--pairs",
            "pairs.jsonl",
            "--annotations",
            "a.jsonl",
            "--output",
            "r1.jsonl",
        ],
    );
    assert_eq!(
        lines(d.join("r1.jsonl")).iter().filter(|r| r["kept"] == true).count(),
        5
    );
    ok(
        d,
        &[
            "--config",
            "qc.cfg",
            "qc",
            "--pairs",
            "pairs.jsonl",
            "--annotations",
            "a.jsonl",
            "--output",
            "r2.jsonl",
            "--vr-drop",
            "0.1",
        ],
    );
    assert_eq!(
        lines(d.join("r2.jsonl")).iter().filter(|r| r["kept"] == true).count(),
        9
    );
}

/// Minimal chat-completions server. Fails the first `fail_first` requests
/// with 503, then replies with the first word of each chunk.
fn chat_server(fail_first: usize, max_requests: usize) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for i in 0..max_requests {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let body = String::from_utf8(body).unwrap();
            seen.push(format!("{head}{body}"));
            let (status, reply) = if i < fail_first {
                (503, "{}".to_owned())
            } else {
                let request: Value = serde_json::from_str(&body).unwrap();
                let user = request["messages"][1]["content"].as_str().unwrap();
                let chunk = user.rsplit("please compress the following text: ").next().unwrap();
                let first = chunk.split_whitespace().next().unwrap_or("");
                let reply =
                    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": first}}]});
                (200, reply.to_string())
            };
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

#[test]
fn http_transport_against_local_server() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("docs.jsonl"),
        "{\"doc_id\":\"d1\",\"text\":\"Alpha beta gamma. Delta epsilon.\"}\n",
    )
    .unwrap();
    let (url, server) = chat_server(1, 2);
    let out = bin()
        .current_dir(d)
        .env("PROMPTPRESS_API_KEY", "sk-local")
        .args([
            "distill",
            "--input",
            "docs.jsonl",
            "--output",
            "pairs.jsonl",
            "--endpoint",
            &url,
            "--model",
            "test-model",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 2, "one failure and one retry");
    let last = &seen[1];
    assert!(last.to_ascii_lowercase().contains("authorization: bearer sk-local"));
    let body: Value = serde_json::from_str(last.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.3);
    assert_eq!(body["max_tokens"], 4096);
    assert!(body["messages"][1]["content"]
        .as_str()
        .unwrap()
        .ends_with("The compressed text is:"));

    let pairs = lines(d.join("pairs.jsonl"));
    assert_eq!(pairs[0]["compressed"], "Alpha");
    assert_eq!(pairs[0]["original"], "Alpha beta gamma. Delta epsilon.");
}

#[test]
fn transport_failure_names_document() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("docs.jsonl"),
        "{\"doc_id\":\"doomed\",\"text\":\"Some words here.\"}\n",
    )
    .unwrap();
    let (url, server) = chat_server(usize::MAX, 2);
    let out = run(
        d,
        &[
            "distill",
            "--input",
            "docs.jsonl",
            "--output",
            "pairs.jsonl",
            "--endpoint",
            &url,
            "--max-retries",
            "1",
        ],
    );
    server.join().unwrap();
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).contains("doomed"));
    assert!(!d.join("pairs.jsonl").exists());
}
