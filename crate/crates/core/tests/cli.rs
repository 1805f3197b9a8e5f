mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use musicskills::mockserver::{MockResponse, MockServer};
use musicskills::qa::{Method, QaItem};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_musicskills"));
    cmd.env_remove("RUST_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| {
        panic!(
            "no summary line\nstdout: {stdout}\nstderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    });
    serde_json::from_str(line).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_items(path: &Path) -> Vec<QaItem> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["generate-rule", "generate-llm", "assemble", "stats", "eval", "validate", "convert"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn bad_flag_is_a_usage_error() {
    let out = run(&["stats", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(&out)["status"], "error");
}

#[test]
fn generate_rule_matches_golden_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_file = dir.path().join("items.jsonl");
    let out = run(&["generate-rule", "--config", p(&fixture("cli_config.json")), "--out", p(&out_file)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["command"], "generate-rule");
    assert_eq!(s["status"], "ok");
    assert_eq!(s["items"], 51);
    assert_eq!(fs::read(&out_file).unwrap(), fs::read(fixture("golden_rule_10.jsonl")).unwrap());
    assert!(out_file.with_extension("report.json").exists());
}

#[test]
fn generate_rule_is_worker_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("cli_config.json");
    let mut outputs = Vec::new();
    for w in ["1", "3"] {
        let f = dir.path().join(format!("w{w}.jsonl"));
        let out = run(&["generate-rule", "--config", p(&cfg), "--workers", w, "--out", p(&f)]);
        assert_eq!(out.status.code(), Some(0));
        outputs.push(fs::read(&f).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("s7.jsonl");
    let out = run(&["generate-rule", "--config", p(&fixture("cli_config.json")), "--seed", "7", "--out", p(&f)]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(fs::read(&f).unwrap(), fs::read(fixture("golden_rule_10.jsonl")).unwrap());
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let config = json!({
        "paths": {"ontology": p(&fixture("ontology.json")), "manifests": [p(&fixture("clips_10.jsonl"))]},
        "music_root": "/m/04rlf"
    });
    fs::write(&cfg, config.to_string()).unwrap();
    let out = run(&["generate-rule", "--config", p(&cfg), "--out", p(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    let s = summary(&out);
    assert_eq!(s["exit_code"], 1);
    assert!(s["error"].as_str().unwrap().contains("seed"));
    assert!(!dir.path().join("x.jsonl").exists());
}

#[test]
fn missing_input_file_is_a_usage_error() {
    let out = run(&["validate", "--input", "/definitely/not/here.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn format_filter_restricts_generation() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bin.jsonl");
    let out = run(&[
        "generate-rule",
        "--config",
        p(&fixture("cli_config.json")),
        "--format-filter",
        "binary",
        "--out",
        p(&f),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let items = read_items(&f);
    assert!(!items.is_empty());
    assert!(items.iter().all(|i| i.format.as_str() == "binary"));
    let golden_binary: Vec<QaItem> = read_items(&fixture("golden_rule_10.jsonl"))
        .into_iter()
        .filter(|i| i.format.as_str() == "binary")
        .collect();
    assert_eq!(items, golden_binary);
}

#[test]
fn validate_passes_golden_and_flags_corruption() {
    let ok = run(&["validate", "--input", p(&fixture("golden_rule_10.jsonl"))]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(summary(&ok)["checked"], 51);

    let mut items = read_items(&fixture("golden_rule_10.jsonl"));
    let victim = items.iter_mut().find(|i| i.format.as_str() == "mcq").unwrap();
    let bad_id = victim.qa_id.clone();
    victim.answer_index = Some(3);
    victim.answer = "Not an option".into();
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.jsonl");
    let body: String = items.iter().map(|i| i.to_json_line() + "\n").collect();
    fs::write(&f, body).unwrap();
    let out = run(&["validate", "--input", p(&f)]);
    assert_eq!(out.status.code(), Some(2));
    let s = summary(&out);
    assert_eq!(s["violations"], 1);
    assert_eq!(s["offending"], json!([bad_id]));
}

#[test]
fn validate_flags_duplicate_ids() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("dup.jsonl");
    let golden = fs::read_to_string(fixture("golden_rule_10.jsonl")).unwrap();
    let first = golden.lines().next().unwrap();
    fs::write(&f, format!("{golden}{first}\n")).unwrap();
    let out = run(&["validate", "--input", p(&f)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(summary(&out)["violations"], 1);
}

#[test]
fn eval_scores_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "eval",
        "--items",
        p(&fixture("eval_items_20.jsonl")),
        "--outputs",
        p(&fixture("eval_outputs_20.jsonl")),
        "--task",
        "mcq",
        "--category-map",
        p(&fixture("eval_category_map.json")),
        "--out",
        p(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert!((s["overall_accuracy"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    let written: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(written.is_object());

    let rel = dir.path().join("rel.json");
    let out = run(&[
        "eval",
        "--items",
        p(&fixture("eval_items_20.jsonl")),
        "--outputs",
        p(&fixture("eval_outputs_20.jsonl")),
        "--baseline",
        p(&report),
        "--out",
        p(&rel),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&rel).unwrap();
    assert!(text.contains("100.0"), "self-relative score should read 100.0: {text}");
}

#[test]
fn eval_rejects_unknown_qa_id() {
    let dir = tempfile::tempdir().unwrap();
    let outs = dir.path().join("o.jsonl");
    fs::write(&outs, "{\"qa_id\": \"nope\", \"text\": \"A\"}\n").unwrap();
    let out = run(&[
        "eval",
        "--items",
        p(&fixture("eval_items_20.jsonl")),
        "--outputs",
        p(&outs),
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn assemble_with_format_filter_drops_only_that_format() {
    let dir = tempfile::tempdir().unwrap();
    let golden = fixture("golden_rule_10.jsonl");
    let all = read_items(&golden);
    let full = dir.path().join("full");
    let out = run(&["assemble", "--seed", "3", "--input", p(&golden), "--out", p(&full)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s_full = summary(&out);
    let mut by_key: BTreeMap<(String, String), &QaItem> = BTreeMap::new();
    for i in &all {
        let k = (i.audio_id.clone(), i.question.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" "));
        let slot = by_key.entry(k).or_insert(i);
        if i.qa_id < slot.qa_id {
            *slot = i;
        }
    }
    let survivors: Vec<&QaItem> = by_key.into_values().collect();
    assert_eq!(s_full["total_items"], survivors.len());
    assert_eq!(s_full["duplicates_removed"], all.len() - survivors.len());

    let ablated = dir.path().join("ablated");
    let out = run(&[
        "assemble",
        "--seed",
        "3",
        "--input",
        p(&golden),
        "--format-filter",
        "open",
        "--format-filter",
        "binary",
        "--format-filter",
        "caption",
        "--out",
        p(&ablated),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let s_abl = summary(&out);
    let mcq = survivors.iter().filter(|i| i.format.as_str() == "mcq").count();
    assert!(mcq > 0);
    assert_eq!(s_abl["dropped_by_format"], mcq);
    assert_eq!(s_abl["total_items"], survivors.len() - mcq);

    let stats = |dir: &Path| {
        let out = run(&["stats", "--input", p(dir)]);
        assert_eq!(out.status.code(), Some(0));
        summary(&out)["table"].clone()
    };
    let t_full = stats(&full);
    let t_abl = stats(&ablated);
    let rows = |t: &Value| -> Vec<Value> {
        let mut rows = t["rows"].as_array().unwrap().clone();
        rows.push(t["total"].clone());
        rows
    };
    for (f, a) in rows(&t_full).iter().zip(rows(&t_abl).iter()) {
        assert_eq!(f["source"], a["source"]);
        assert_eq!(a["mcq"], 0);
        for col in ["captioning", "qa", "binary"] {
            assert_eq!(f[col], a[col], "{} {col}", f["source"]);
        }
    }
    let validate = run(&["validate", "--input", p(&ablated)]);
    assert_eq!(validate.status.code(), Some(0));
}

#[test]
fn assemble_without_inputs_is_a_usage_error() {
    let out = run(&["assemble", "--seed", "1", "--out", "/tmp/never-written"]);
    assert_eq!(out.status.code(), Some(1));
}

fn llm_config(dir: &Path, url: &str) -> std::path::PathBuf {
    let cfg = dir.join("llm.json");
    let config = json!({
        "paths": {"manifests": [p(&fixture("clips_10.jsonl"))], "cache_dir": p(&dir.join("cache"))},
        "workers": 2,
        "llm": {
            "base_url": url,
            "model": "mock-model",
            "api_key_env": "MUSICSKILLS_TEST_KEY",
            "max_retries": 2,
            "initial_backoff_ms": 5,
            "max_backoff_ms": 10,
            "timeout_s": 5
        }
    });
    fs::write(&cfg, config.to_string()).unwrap();
    cfg
}

#[test]
fn generate_llm_against_mock_server() {
    let reply = r#"[{"question":"Is there a piano?","format":"binary","answer":"Yes","dimension":"instrumentation"},
{"question":"What mood does it create?","format":"open","answer":"Calm.","dimension":"mood"}]"#;
    let server = MockServer::scripted(vec![], MockResponse::chat(reply)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = llm_config(dir.path(), &server.url());
    let f = dir.path().join("llm.jsonl");
    let out = bin()
        .args(["generate-llm", "--config", p(&cfg), "--out", p(&f)])
        .env("MUSICSKILLS_TEST_KEY", "sk-cli")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    let requests = server.request_count();
    assert!(requests > 0);
    assert_eq!(s["network_requests"], requests);
    assert_eq!(s["items"], 2 * requests);
    assert!(server.requests().iter().all(|r| r.bearer() == Some("sk-cli")));
    let items = read_items(&f);
    assert!(items.iter().all(|i| i.method == Method::Llm));

    let again = bin()
        .args(["generate-llm", "--config", p(&cfg), "--out", p(&f)])
        .env("MUSICSKILLS_TEST_KEY", "sk-cli")
        .output()
        .unwrap();
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(summary(&again)["network_requests"], 0);
    assert_eq!(server.request_count(), requests);
}

#[test]
fn generate_llm_service_failures_exit_three() {
    for status in [401u16, 500] {
        let server = MockServer::scripted(vec![], MockResponse::error(status, "down")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = llm_config(dir.path(), &server.url());
        let out = bin()
            .args(["generate-llm", "--config", p(&cfg), "--out", p(&dir.path().join("x.jsonl"))])
            .env("MUSICSKILLS_TEST_KEY", "sk-cli")
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(3), "status {status}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(summary(&out)["exit_code"], 3);
    }
}
