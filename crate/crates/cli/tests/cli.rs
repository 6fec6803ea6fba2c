use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use tracecard::distill::SectionName;

const BIN: &str = env!("CARGO_BIN_EXE_tracecard");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn command(args: &[&str]) -> Command {
    let mut c = Command::new(BIN);
    c.args(args)
        .env_remove("TRACECARD_LISTEN")
        .env_remove("TRACECARD_DATA_DIR")
        .env_remove("TRACECARD_PRICING");
    c
}

fn run(args: &[&str]) -> Output {
    command(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Server {
    child: Child,
    url: String,
}

impl Server {
    fn start(data_dir: &Path) -> Server {
        let mut child = command(&["serve", "--data-dir", s(data_dir), "--listen", "127.0.0.1:0"])
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
        let addr = loop {
            let line = lines.next().expect("server exited before listening").unwrap();
            if let Some(addr) = line.strip_prefix("listening on ") {
                break addr.to_string();
            }
        };
        std::thread::spawn(move || for _ in lines {});
        Server {
            child,
            url: format!("http://{addr}"),
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// synth → serve → ingest; returns the synth and data directories.
fn ingested_corpus(root: &Path) -> (PathBuf, PathBuf) {
    let corpus = root.join("corpus");
    let data = root.join("data");
    ok(&["synth", "--out", s(&corpus)]);
    let server = Server::start(&data);
    let receipt = ok(&["ingest", "--server", &server.url, s(&corpus.join("events.jsonl"))]);
    let v: serde_json::Value = serde_json::from_str(&receipt).unwrap();
    assert!(v["accepted"].as_u64().unwrap() > 0);
    assert_eq!(v["rejected"], 0);
    (corpus, data)
}

fn get(url: &str) -> (u16, Vec<u8>) {
    tokio::runtime::Runtime::new().unwrap().block_on(async {
        let resp = reqwest::get(url).await.unwrap();
        (resp.status().as_u16(), resp.bytes().await.unwrap().to_vec())
    })
}

#[test]
fn unwritable_data_dir_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    std::fs::write(&file, "x").unwrap();
    let out = run(&["serve", "--data-dir", s(&file.join("store"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data directory"));
}

#[test]
fn bad_pricing_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let pricing = dir.path().join("rates.toml");
    std::fs::write(&pricing, "version = 9\n").unwrap();
    let out = run(&["synth", "--out", s(dir.path()), "--pricing", s(&pricing)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, data) = ingested_corpus(dir.path());
    let before = {
        let server = Server::start(&data);
        let (status, body) = get(&format!("{}/v1/sessions/task-100", server.url));
        assert_eq!(status, 200);
        body
    };
    let server = Server::start(&data);
    let (status, after) = get(&format!("{}/v1/sessions/task-100", server.url));
    assert_eq!(status, 200);
    assert_eq!(before, after);
    let receipt = ok(&["ingest", "--server", &server.url, s(&corpus.join("events.jsonl"))]);
    let v: serde_json::Value = serde_json::from_str(&receipt).unwrap();
    assert_eq!(v["accepted"], 0);
    assert_eq!(get(&format!("{}/v1/sessions/task-100", server.url)).1, before);
    assert_eq!(get(&format!("{}/v1/sessions/nope", server.url)).0, 404);
}

#[test]
fn compile_is_deterministic_and_reports_unknown_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, data) = ingested_corpus(dir.path());
    let outcomes = corpus.join("outcomes.yaml");
    let a = dir.path().join("cards-a");
    let b = dir.path().join("cards-b");
    ok(&["compile", "--all", "--data-dir", s(&data), "--out", s(&a), "--outcomes", s(&outcomes)]);
    ok(&["compile", "--all", "--data-dir", s(&data), "--out", s(&b), "--outcomes", s(&outcomes)]);
    let names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    // 12 tasks, two of which delegate to a sub-agent session
    assert_eq!(names.len(), 14);
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap());
    }

    let one = dir.path().join("one");
    let listed = ok(&["compile", "task-101", "--data-dir", s(&data), "--out", s(&one)]);
    assert_eq!(listed.lines().count(), 1);

    let out = run(&["compile", "task-101", "ghost-1", "ghost-2", "--data-dir", s(&data), "--out", s(&one)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ghost-1") && err.contains("ghost-2"), "{err}");
}

#[test]
fn tree_and_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = ingested_corpus(dir.path());
    let tree = ok(&["tree", "task-100", "--data-dir", s(&data)]);
    assert!(tree.contains("read_file"));
    assert!(tree.contains('$'));
    let bare = ok(&["tree", "task-100", "--no-costs", "--data-dir", s(&data)]);
    assert!(!bare.contains('$'));
    let graph = ok(&["tree", "task-103", "--graph", "--data-dir", s(&data)]);
    assert!(graph.contains("task-103-sub"));
    let timeline = ok(&["timeline", "task-100", "--width", "40", "--data-dir", s(&data)]);
    assert!(!timeline.is_empty());
    assert_eq!(run(&["tree", "ghost", "--data-dir", s(&data)]).status.code(), Some(1));
    assert_eq!(
        run(&["tree", "task-100", "--data-dir", s(&dir.path().join("missing"))]).status.code(),
        Some(2)
    );
}

fn compiled(dir: &Path) -> (PathBuf, PathBuf) {
    let (corpus, data) = ingested_corpus(dir);
    let outcomes = corpus.join("outcomes.yaml");
    let cards = dir.join("cards");
    ok(&["compile", "--all", "--data-dir", s(&data), "--out", s(&cards), "--outcomes", s(&outcomes)]);
    (cards, outcomes)
}

#[test]
fn distill_writes_document_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let (cards, outcomes) = compiled(dir.path());
    let full = dir.path().join("full/SKILL.md");
    ok(&["distill", "--cards", s(&cards), "--outcomes", s(&outcomes), "--condition", "full", "--out", s(&full)]);
    let md = std::fs::read_to_string(&full).unwrap();
    for name in SectionName::ALL {
        assert!(md.contains(&format!("## {}", name.heading())), "{md}");
    }
    let provenance = std::fs::read_to_string(dir.path().join("full/SKILL.provenance.yaml")).unwrap();
    assert!(provenance.contains("condition: full"));

    let no_prune = dir.path().join("no_prune.md");
    ok(&["distill", "--cards", s(&cards), "--outcomes", s(&outcomes), "--condition", "no_prune", "--out", s(&no_prune)]);
    let md = std::fs::read_to_string(&no_prune).unwrap();
    let cost_control = md.split("## Cost control").nth(1).unwrap();
    let section = cost_control.split("\n## ").next().unwrap();
    assert!(!section.contains("\n- "), "{section}");

    let baseline = run(&["distill", "--cards", s(&cards), "--outcomes", s(&outcomes), "--condition", "baseline", "--out", s(&no_prune)]);
    assert_eq!(baseline.status.code(), Some(2));
}

/// Distinct long repair rules; enough of them overflow the token ceiling.
fn oversize_patches(trajectory: &str) -> String {
    const WORDS: &[&str] = &["column", "header", "formula", "sheet", "total", "range", "value", "output"];
    let mut state = 0x9e37_79b9_u32;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 17;
        state ^= state << 5;
        state as usize
    };
    let mut yaml = String::new();
    for i in 0..60 {
        let words: Vec<&str> = (0..14).map(|_| WORDS[next() % WORDS.len()]).collect();
        yaml.push_str(&format!(
            "- id: \"extra-{i}\"\n  action: repair\n  rule: \"Check the {}.\"\n  source_trajectory: \"{trajectory}\"\n  evidence: \"item {i} differed\"\n  confidence: high\n",
            words.join(" ")
        ));
    }
    yaml
}

#[test]
fn oversized_document_fails_post_check() {
    let dir = tempfile::tempdir().unwrap();
    let (cards, outcomes) = compiled(dir.path());
    let extra = dir.path().join("extra.yaml");
    std::fs::write(&extra, oversize_patches("task-102")).unwrap();
    let out_path = dir.path().join("skill.md");
    let out = run(&[
        "distill",
        "--cards",
        s(&cards),
        "--outcomes",
        s(&outcomes),
        "--condition",
        "full",
        "--out",
        s(&out_path),
        "--extra-patches",
        s(&extra),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("token ceiling"), "{err}");
    assert!(!out_path.exists());
}

#[test]
fn ablate_writes_every_condition() {
    let dir = tempfile::tempdir().unwrap();
    let (cards, outcomes) = compiled(dir.path());
    let out = dir.path().join("ablation");
    ok(&["ablate", "--cards", s(&cards), "--outcomes", s(&outcomes), "--out", s(&out)]);
    for cond in ["full", "no_prune", "no_cost_attr", "no_cf"] {
        assert!(out.join(format!("{cond}.md")).exists(), "{cond}");
        assert!(out.join(format!("{cond}.provenance.yaml")).exists(), "{cond}");
    }
}

#[test]
fn eval_reports_fixture_figures() {
    let dir = tempfile::tempdir().unwrap();
    let results = fixture("ablation_results.csv");
    let stdout = ok(&[
        "eval",
        "--results",
        s(&results),
        "--skill-condition",
        "full",
        "--out",
        s(dir.path()),
    ]);
    assert!(stdout.contains("86.7"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("full.json")).unwrap()).unwrap();
    assert_eq!(json["counts"]["regressions"], 4);
    assert_eq!(std::fs::read_to_string(dir.path().join("full.md")).unwrap(), stdout);

    // reversed row order gives the same report
    let text = std::fs::read_to_string(&results).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.reverse();
    let shuffled = dir.path().join("shuffled.csv");
    std::fs::write(&shuffled, format!("{header}\n{}\n", lines.join("\n"))).unwrap();
    assert_eq!(ok(&["eval", "--results", s(&shuffled), "--skill-condition", "full"]), stdout);

    let single = dir.path().join("single.csv");
    std::fs::write(&single, "task_id,condition,quality,cost_usd\nt1,baseline,1.0,0.05\nt1,full,1.0,0.04\n").unwrap();
    let report = ok(&["eval", "--results", s(&single), "--skill-condition", "full"]);
    assert!(report.contains("100.0"), "{report}");

    let out = run(&["eval", "--results", s(&single), "--skill-condition", "teleport"]);
    assert_eq!(out.status.code(), Some(2));
}
