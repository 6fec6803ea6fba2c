use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracecard::span::{resolve_links, LinkageMap, SpanError};
use tracecard::synth::{corpus, random_session};
use tracecard::{build_tree, Payload, SessionLog, SpanKind, TokenUsage};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn llm_tokens_are_conserved(seed in any::<u64>(), turns in 1usize..12) {
        let log = random_session(seed, "prop", turns);
        let emitted: TokenUsage = log
            .events
            .iter()
            .filter_map(|e| match &e.payload {
                Payload::LlmOutput { tokens, .. } => Some(*tokens),
                _ => None,
            })
            .sum();
        let tree = build_tree(&log).unwrap();
        let spanned: TokenUsage = tree.llm_spans().iter().filter_map(|s| s.tokens).sum();
        prop_assert_eq!(emitted, spanned);
        for s in tree.spans() {
            prop_assert!(s.start <= s.end);
            for c in &s.children {
                prop_assert!(c.start >= s.start && c.end <= s.end);
            }
        }
    }

    #[test]
    fn arrival_order_does_not_matter(seed in any::<u64>(), shuffle in any::<u64>()) {
        let log = random_session(seed, "order", 6);
        let mut events = log.events.clone();
        events.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let reordered = SessionLog::from_events("order", events).unwrap();
        prop_assert_eq!(build_tree(&reordered).unwrap(), build_tree(&log).unwrap());
    }
}

#[test]
fn corpus_call_graph_attaches_every_child() {
    let (events, _) = corpus(0, 20);
    let logs = SessionLog::group(events).unwrap();
    let trees: Vec<_> = logs.iter().map(|l| build_tree(l).unwrap()).collect();
    let links = LinkageMap::from_trees(&trees).unwrap();
    assert!(!links.is_empty());
    let graph = resolve_links(&trees, &links).unwrap();
    assert!(graph.unresolved().is_empty());
    assert_eq!(graph.sessions().len(), trees.len());
    for (child, target) in links.iter() {
        let parent = graph.find(&target.parent_session_key).unwrap();
        let span = parent.tree.find(&target.parent_span_id).unwrap();
        assert_eq!(span.kind, SpanKind::Subagent);
        assert_eq!(span.child_session_key.as_deref(), Some(child.as_str()));
    }
}

#[test]
fn delegation_cycle_is_rejected() {
    let mut links = LinkageMap::new();
    links.insert("b", "a", "span-1").unwrap();
    links.insert("a", "b", "span-1").unwrap();
    let trees = Vec::new();
    match resolve_links(&trees, &links) {
        Err(SpanError::LinkageCycle(keys)) => assert_eq!(keys, ["a", "b"]),
        other => panic!("{other:?}"),
    }
}
