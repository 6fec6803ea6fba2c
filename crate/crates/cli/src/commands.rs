use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde_json::Value;
use tracecard::card::{compile_card_with_children, emit_yaml, parse_yaml, CompilerConfig, TraceCard};
use tracecard::cost::{call_graph_costs, session_cost};
use tracecard::distill::{
    distill as run_distill, Condition, Distiller, MergeConfig, OracleBudget, Patch, RecordedOracle, TaskRecord,
    TemplateErrorAnalyst, TemplateSuccessAnalyst, Trajectory,
};
use tracecard::eval::{pair_conditions, read_results, summarize, write_results};
use tracecard::render::{render_call_graph, render_timeline, render_tree};
use tracecard::span::{resolve_links, LinkageMap};
use tracecard::synth::{corpus, synthetic_results, task_records};
use tracecard::event::canonical_serialize;
use tracecard::{build_tree, SessionTree};
use tracecard_ingest::{Store, StoreError};

use crate::settings::Settings;
use crate::{Failure, WithCode, EXIT_CONFIG, EXIT_POST_CHECK};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// File-name form of a session key.
fn file_stem(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("installing a SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

pub fn serve(settings: &Settings, listen: Option<SocketAddr>) -> Result<(), Failure> {
    let store = Store::open(settings.data_dir())
        .with_context(|| format!("data directory {}", settings.data_dir().display()))
        .code(EXIT_CONFIG)?;
    let addr = listen.unwrap_or(settings.service.listen);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on {}", listener.local_addr()?);
        tracecard_ingest::serve(listener, Arc::new(store), shutdown_signal()).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}

pub fn ingest(server: &str, batch: usize, files: &[PathBuf]) -> Result<(), Failure> {
    if batch == 0 {
        return Err(anyhow!("--batch must be positive")).code(EXIT_CONFIG);
    }
    let url = format!("{}/v1/traces/events", server.trim_end_matches('/'));
    let client = reqwest::Client::new();
    let runtime = tokio::runtime::Runtime::new()?;
    let (mut accepted, mut duplicates, mut rejected) = (0u64, 0u64, 0u64);
    for path in files {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let mut lines = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.with_context(|| format!("reading {}", path.display()))?;
            if !line.trim().is_empty() {
                lines.push(line);
            }
        }
        for (chunk_no, chunk) in lines.chunks(batch).enumerate() {
            let body = chunk.join("\n");
            let (status, text) = runtime.block_on(async {
                let resp = client.post(&url).body(body).send().await?;
                let status = resp.status();
                Ok::<_, reqwest::Error>((status, resp.text().await?))
            })?;
            if !status.is_success() {
                return Err(anyhow!("{}: server answered {status}: {text}", path.display()).into());
            }
            let receipt: Value = serde_json::from_str(&text).context("decoding receipt")?;
            accepted += receipt["accepted"].as_u64().unwrap_or(0);
            duplicates += receipt["duplicates"].as_u64().unwrap_or(0);
            for r in receipt["rejected"].as_array().into_iter().flatten() {
                rejected += 1;
                let index = r["index"].as_u64().unwrap_or(0) as usize + chunk_no * batch;
                eprintln!(
                    "{}: event {} rejected: {}: {}",
                    path.display(),
                    index + 1,
                    r["field"].as_str().unwrap_or("$"),
                    r["reason"].as_str().unwrap_or("")
                );
            }
        }
    }
    println!(
        "{}",
        serde_json::json!({ "accepted": accepted, "duplicates": duplicates, "rejected": rejected })
    );
    Ok(())
}

fn open_store(settings: &Settings) -> Result<Store, Failure> {
    Store::open_existing(settings.data_dir())
        .with_context(|| format!("data directory {}", settings.data_dir().display()))
        .code(EXIT_CONFIG)
}

fn load_tree(store: &Store, key: &str) -> Result<SessionTree, Failure> {
    Ok(build_tree(&store.load(key)?)?)
}

fn read_records(path: &Path) -> Result<Vec<TaskRecord>, Failure> {
    let text = read(path)?;
    Ok(serde_yaml::from_str(&text).with_context(|| format!("parsing outcome records {}", path.display()))?)
}

pub fn compile(
    settings: &Settings,
    keys: &[String],
    all: bool,
    out: &Path,
    outcomes: Option<&Path>,
) -> Result<(), Failure> {
    let store = open_store(settings)?;
    let stored = store.session_keys()?;
    let wanted: Vec<String> = if all {
        stored.clone()
    } else if keys.is_empty() {
        return Err(anyhow!("name at least one session or pass --all")).code(EXIT_CONFIG);
    } else {
        let known: BTreeSet<&String> = stored.iter().collect();
        let missing: Vec<&str> = keys.iter().filter(|k| !known.contains(k)).map(String::as_str).collect();
        if !missing.is_empty() {
            return Err(anyhow!("unknown sessions: {}", missing.join(", ")).into());
        }
        keys.to_vec()
    };
    let graded: BTreeMap<String, tracecard::Outcome> = match outcomes {
        Some(p) => read_records(p)?.into_iter().map(|r| (r.session_id, r.outcome)).collect(),
        None => BTreeMap::new(),
    };
    let trees: BTreeMap<String, SessionTree> = stored
        .iter()
        .map(|k| Ok((k.clone(), load_tree(&store, k)?)))
        .collect::<Result<_, Failure>>()?;
    let mut stems: BTreeMap<String, &str> = BTreeMap::new();
    for key in &wanted {
        if let Some(other) = stems.insert(file_stem(key), key) {
            return Err(anyhow!("sessions {other:?} and {key:?} map to the same file name").into());
        }
    }
    for key in &wanted {
        let tree = &trees[key];
        let children: BTreeMap<String, &SessionTree> = tree
            .child_links
            .iter()
            .filter_map(|l| trees.get(&l.child_session_key).map(|t| (l.child_session_key.clone(), t)))
            .collect();
        let config = CompilerConfig {
            failure_patterns: settings.failure_patterns.clone(),
            outcome: graded.get(key).copied(),
            ..CompilerConfig::default()
        };
        let compiled = compile_card_with_children(tree, &children, &settings.pricing, &config)?;
        for d in &compiled.diagnostics {
            eprintln!("{key}: {d}");
        }
        let path = out.join(format!("{}.yaml", file_stem(key)));
        write(&path, emit_yaml(&compiled.card))?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn tree(settings: &Settings, key: &str, costs: bool, graph: bool) -> Result<(), Failure> {
    let store = open_store(settings)?;
    if graph {
        let trees: Vec<SessionTree> = store
            .session_keys()?
            .iter()
            .map(|k| load_tree(&store, k))
            .collect::<Result<_, _>>()?;
        let map = LinkageMap::from_trees(&trees)?;
        let graph = resolve_links(&trees, &map)?;
        if graph.find(key).is_none() {
            return Err(StoreError::NotFound(key.to_string()).into());
        }
        let costs = call_graph_costs(&graph, &settings.pricing)?;
        print!("{}", render_call_graph(&graph, &costs));
        return Ok(());
    }
    let tree = load_tree(&store, key)?;
    let costs = if costs {
        Some(session_cost(&tree, &settings.pricing)?)
    } else {
        None
    };
    print!("{}", render_tree(&tree, costs.as_ref()));
    Ok(())
}

pub fn timeline(settings: &Settings, key: &str, width: usize) -> Result<(), Failure> {
    let store = open_store(settings)?;
    let tree = load_tree(&store, key)?;
    print!("{}", render_timeline(&tree, width));
    Ok(())
}

/// Cards, outcome records and extra patches shared by `distill` and
/// `ablate`.
pub struct DistillInputs {
    trajectories: Vec<Trajectory>,
    oracle: RecordedOracle,
    extra: Vec<Patch>,
    config: MergeConfig,
}

impl DistillInputs {
    pub fn load(
        settings: &Settings,
        cards_dir: &Path,
        outcomes: &Path,
        extra_patches: Option<&Path>,
        title: Option<String>,
    ) -> Result<Self, Failure> {
        let records = read_records(outcomes)?;
        let mut cards: BTreeMap<String, TraceCard> = BTreeMap::new();
        let entries = fs::read_dir(cards_dir).with_context(|| format!("reading {}", cards_dir.display()))?;
        let mut paths: Vec<PathBuf> = entries
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .with_context(|| format!("reading {}", cards_dir.display()))?;
        paths.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("yaml" | "yml")));
        paths.sort();
        for p in paths {
            let card = parse_yaml(&read(&p)?).with_context(|| format!("parsing card {}", p.display()))?;
            cards.insert(card.session_id.clone(), card);
        }
        let mut trajectories = Vec::new();
        let mut missing = Vec::new();
        for r in &records {
            match cards.get(&r.session_id) {
                Some(card) => trajectories.push(Trajectory {
                    card: card.clone(),
                    outcome: r.outcome,
                }),
                None => missing.push(r.session_id.as_str()),
            }
        }
        if !missing.is_empty() {
            return Err(anyhow!("no card for: {}", missing.join(", ")).into());
        }
        let extra = match extra_patches {
            Some(p) => serde_yaml::from_str(&read(p)?).with_context(|| format!("parsing patches {}", p.display()))?,
            None => Vec::new(),
        };
        let mut config = MergeConfig {
            denylist: settings.denylist.clone(),
            ..MergeConfig::default()
        };
        if let Some(t) = title {
            config.title = t;
        }
        Ok(DistillInputs {
            trajectories,
            oracle: RecordedOracle::new(records),
            extra,
            config,
        })
    }
}

fn provenance_path(out: &Path) -> PathBuf {
    out.with_extension("provenance.yaml")
}

/// Runs one condition and writes its outputs. `Ok(false)` when the
/// document failed its post-checks.
fn distill_one(inputs: &DistillInputs, condition: Condition, out: &Path) -> Result<bool, Failure> {
    if !condition.distills() {
        return Err(anyhow!("the {condition} condition produces no skill document")).code(EXIT_CONFIG);
    }
    let distiller = Distiller {
        success: &TemplateSuccessAnalyst,
        error: &TemplateErrorAnalyst,
        oracle: &inputs.oracle,
        budget: OracleBudget::default(),
    };
    let (run, doc) = run_distill(&inputs.trajectories, &inputs.extra, condition, &distiller, &inputs.config);
    for d in &run.diagnostics {
        eprintln!("{condition}: {d}");
    }
    write(&provenance_path(out), run.to_yaml())?;
    match doc.expect("distilling conditions yield a document") {
        Ok(doc) => {
            write(out, doc.to_markdown())?;
            println!("{}", out.display());
            Ok(true)
        }
        Err(failure) => {
            for v in &failure.violations {
                eprintln!("{condition}: post-check: {v}");
            }
            Ok(false)
        }
    }
}

pub fn distill(inputs: &DistillInputs, condition: Condition, out: &Path) -> Result<(), Failure> {
    if distill_one(inputs, condition, out)? {
        Ok(())
    } else {
        Err(anyhow!("skill document failed its post-checks")).code(EXIT_POST_CHECK)
    }
}

pub fn ablate(inputs: &DistillInputs, out: &Path) -> Result<(), Failure> {
    let mut failed = Vec::new();
    for condition in Condition::ALL.into_iter().filter(|c| c.distills()) {
        if !distill_one(inputs, condition, &out.join(format!("{condition}.md")))? {
            failed.push(condition.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("post-checks failed for: {}", failed.join(", "))).code(EXIT_POST_CHECK)
    }
}

pub fn eval(results: &Path, baseline: Condition, skill: Condition, out: Option<&Path>) -> Result<(), Failure> {
    let file = fs::File::open(results).with_context(|| format!("opening {}", results.display()))?;
    let outcomes = read_results(file).with_context(|| format!("reading {}", results.display()))?;
    let pairs = pair_conditions(&outcomes, baseline, skill)?;
    let report = summarize(&pairs, baseline, skill)
        .ok_or_else(|| anyhow!("no {skill} results to compare against {baseline}"))?;
    let markdown = report.to_markdown();
    print!("{markdown}");
    if let Some(dir) = out {
        write(&dir.join(format!("{skill}.md")), &markdown)?;
        write(&dir.join(format!("{skill}.json")), report.to_canonical_json())?;
    }
    Ok(())
}

pub fn synth(seed: u64, sessions: usize, out: &Path) -> Result<(), Failure> {
    let (events, outcomes) = corpus(seed, sessions);
    let mut lines = Vec::new();
    for e in &events {
        lines.extend(canonical_serialize(e));
        lines.push(b'\n');
    }
    write(&out.join("events.jsonl"), lines)?;
    let records = task_records(&outcomes);
    write(&out.join("outcomes.yaml"), serde_yaml::to_string(&records)?)?;
    write(&out.join("results.csv"), write_results(&synthetic_results(seed, &outcomes)))?;
    println!("{} events, {} tasks", events.len(), outcomes.len());
    Ok(())
}
