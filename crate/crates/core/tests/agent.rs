use std::collections::BTreeMap;

use geo_forge::agent::*;
use geo_forge::ann::{build, HnswIndex, HnswParams};
use geo_forge::encoders::{train_encoder, EncoderConfig, LossKind};
use geo_forge::model::records::{QueryCategory, QueryRecord};
use geo_forge::model::HashingEmbedder;
use geo_forge::synth::{generate, held_out_topics, SynthConfig};
use proptest::prelude::*;

fn feed_record(term: &str, category: &str, velocity: f64) -> TrendFeedRecord {
    TrendFeedRecord {
        term: term.into(),
        region: "US".into(),
        timespan: "7d".into(),
        category: category.into(),
        velocity: Some(velocity),
        lifecycle: None,
    }
}

fn taxonomy() -> Taxonomy {
    let mut m = BTreeMap::new();
    m.insert("beauty".to_string(), vec!["fall nails".to_string(), "nail art".to_string()]);
    m.insert("fashion".to_string(), vec!["sage green".to_string(), "linen dress".to_string()]);
    Taxonomy::new(m)
}

/// Real filter and expander; lookup answers from a fixed table, and fetches
/// for `fail_region` error out.
struct MockTools {
    feed: FileTrendFeed,
    taxonomy: Taxonomy,
    fail_region: Option<String>,
    count: usize,
}

impl ToolSuite for MockTools {
    fn fetch_trends(&self, region: &str, timespan: &str) -> Result<Vec<TrendSignal>, ToolError> {
        if self.fail_region.as_deref() == Some(region) {
            return Err(ToolError::new("fetch_trends", "feed offline"));
        }
        Ok(self.feed.fetch(region, timespan))
    }

    fn semantic_filter(&self, trend: &TrendSignal, threshold: f64) -> Result<Relevance, ToolError> {
        let blocked: Vec<String> = DEFAULT_BLOCKED.iter().map(|s| s.to_string()).collect();
        Ok(semantic_filter(trend, threshold, &self.taxonomy, &blocked, &HashingEmbedder::new(256)))
    }

    fn content_lookup(&self, _query: &QueryRecord, min_count: usize) -> Result<LookupResult, ToolError> {
        Ok(LookupResult {
            count: self.count,
            mean_quality: 0.5,
            sufficient: self.count > min_count,
        })
    }

    fn expand_query(&self, trend: &TrendSignal, memory: &LongMemory, n: usize) -> Result<Vec<QueryRecord>, ToolError> {
        expand_query(trend, &self.taxonomy, memory, n, 7)
    }
}

fn mock(records: Vec<TrendFeedRecord>) -> MockTools {
    MockTools {
        feed: FileTrendFeed { records },
        taxonomy: taxonomy(),
        fail_region: None,
        count: 40,
    }
}

fn signal(term: &str, category: &str, velocity: f64) -> TrendSignal {
    feed_record(term, category, velocity).to_signal().unwrap()
}

/// Checks the per-trace guarantees: node order, constraint satisfaction of
/// every emitted query, blocked categories absent from expansion, long
/// memory written only at validation, and exact replay.
fn audit(config: &AgentConfig, start: &LongMemory, ep: &Episode) {
    let visited = ep.state.visited();
    assert_eq!(visited, Node::ORDER.to_vec());
    for w in ep.trace.windows(2) {
        assert!(w[0].node <= w[1].node);
    }

    let mut s = AgentState::new(start.clone());
    for e in &ep.trace {
        let next = transition(&s, &e.action, &e.observation).unwrap();
        assert_eq!(next.short_memory.len(), s.short_memory.len() + 1);
        if e.node != Node::Validation {
            assert_eq!(next.long_memory, s.long_memory);
        }
        s = next;
    }
    assert_eq!(s, ep.state);
    assert_eq!(replay(start.clone(), &ep.trace).unwrap(), ep.state);

    for e in &ep.trace {
        if let Action::ExpandQuery { term } = &e.action {
            let t = ep.state.trend(term).unwrap();
            assert!(!config.blocked_categories.contains(&t.category), "{term} reached expansion");
        }
    }
    for q in &ep.queries {
        let (term, lookup_ok) = ep
            .trace
            .iter()
            .find_map(|e| match (&e.action, &e.observation) {
                (Action::ContentLookup { term, query }, Observation::Lookup { sufficient, .. }) if query == &q.text => {
                    Some((term.clone(), *sufficient))
                }
                _ => None,
            })
            .expect("emitted query was looked up");
        assert!(lookup_ok);
        let passed = ep.trace.iter().any(|e| {
            matches!((&e.action, &e.observation),
                (Action::SemanticFilter { term: t }, Observation::Relevance { keep: true, blocked: false, velocity_ok: true, pass: true, .. }) if t == &term)
        });
        assert!(passed, "{term} emitted without passing the filter");
        let t = ep.state.trend(&term).unwrap();
        assert!(t.velocity >= config.velocity_floor);
    }
}

#[test]
fn transition_examples() {
    let s = AgentState::new(LongMemory::new());
    let a = Action::Plan;
    let o = Observation::Plan {
        calls: vec![FetchCall {
            region: "US".into(),
            timespan: "7d".into(),
        }],
    };
    let s1 = transition(&s, &a, &o).unwrap();
    assert_eq!(s1.short_memory.len(), 1);
    assert_eq!(transition(&s, &a, &o).unwrap(), s1);
    let bad = Action::SemanticFilter { term: "x".into() };
    assert!(matches!(
        transition(&s, &bad, &Observation::Moved),
        Err(TransitionError::NotPermitted { node: Node::Planning, .. })
    ));
    assert!(matches!(
        transition(&s, &Action::Advance { to: Node::Filtering }, &Observation::Moved),
        Err(TransitionError::NotPermitted { .. })
    ));
    assert!(matches!(
        transition(&s, &Action::Plan, &Observation::Moved),
        Err(TransitionError::Mismatch { .. })
    ));
    let err = Observation::ToolError { message: "boom".into() };
    let s2 = transition(&s, &Action::Plan, &err).unwrap();
    assert_eq!(s2.short_memory.len(), 1);
    assert!(s2.plan.is_empty());
}

#[test]
fn empty_feed_visits_every_node() {
    let cfg = AgentConfig::default();
    let ep = run_episode(&cfg, &mock(vec![]), LongMemory::new()).unwrap();
    assert!(ep.queries.is_empty());
    assert_eq!(ep.state.visited(), Node::ORDER.to_vec());
    audit(&cfg, &LongMemory::new(), &ep);
}

#[test]
fn blocked_trend_never_reaches_expansion() {
    let cfg = AgentConfig::default();
    let tools = mock(vec![feed_record("fall nails", "beauty", 0.9), feed_record("election results", "politics", 3.0)]);
    let ep = run_episode(&cfg, &tools, LongMemory::new()).unwrap();
    let expanded: Vec<&str> = ep
        .trace
        .iter()
        .filter_map(|e| match &e.action {
            Action::ExpandQuery { term } => Some(term.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(expanded, ["fall nails"]);
    assert_eq!(ep.queries.len(), cfg.expansions);
    assert!(ep.queries.iter().all(|q| q.text.contains("fall nails")));
    audit(&cfg, &LongMemory::new(), &ep);
}

#[test]
fn same_inputs_give_byte_identical_traces() {
    let cfg = AgentConfig::default();
    let recs = vec![feed_record("fall nails", "beauty", 0.9), feed_record("sage green", "fashion", 0.5)];
    let a = run_episode(&cfg, &mock(recs.clone()), LongMemory::new()).unwrap();
    let b = run_episode(&cfg, &mock(recs), LongMemory::new()).unwrap();
    assert_eq!(trace_bytes(&a.trace), trace_bytes(&b.trace));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("agent_trace.jsonl");
    write_trace(&p, &a.trace).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), trace_bytes(&a.trace));
    let back = read_trace(&p).unwrap();
    assert_eq!(replay(LongMemory::new(), &back).unwrap(), a.state);

    let m = dir.path().join("memory.json");
    assert!(load_long_memory(&m).unwrap().is_empty());
    save_long_memory(&m, &a.state.long_memory).unwrap();
    assert_eq!(load_long_memory(&m).unwrap(), a.state.long_memory);
}

#[test]
fn tool_failures_are_soft_but_planning_is_fatal() {
    let mut cfg = AgentConfig::default();
    let mut recs = vec![feed_record("fall nails", "beauty", 0.9)];
    let mut gb = feed_record("sage green", "fashion", 0.9);
    gb.region = "GB".into();
    recs.push(gb);
    let mut tools = mock(recs);
    tools.fail_region = Some("GB".into());
    let ep = run_episode(&cfg, &tools, LongMemory::new()).unwrap();
    assert!(ep.trace.iter().any(|e| matches!(e.observation, Observation::ToolError { .. })));
    assert!(ep.queries.iter().all(|q| q.text.contains("fall nails")));
    assert!(!ep.queries.is_empty());
    audit(&cfg, &LongMemory::new(), &ep);

    cfg.regions.clear();
    assert!(matches!(run_episode(&cfg, &tools, LongMemory::new()), Err(AgentError::Planning(_))));
}

#[test]
fn slow_or_thin_trends_are_not_emitted() {
    let cfg = AgentConfig::default();
    let ep = run_episode(&cfg, &mock(vec![feed_record("fall nails", "beauty", 0.1)]), LongMemory::new()).unwrap();
    assert!(ep.queries.is_empty());
    let mut tools = mock(vec![feed_record("fall nails", "beauty", 0.9)]);
    tools.count = cfg.min_count;
    let ep = run_episode(&cfg, &tools, LongMemory::new()).unwrap();
    assert!(ep.queries.is_empty());
    let rec = &ep.state.long_memory["fall nails"];
    assert_eq!(rec.validations, cfg.expansions as u32);
    assert_eq!(rec.accepted, 0);
}

#[test]
fn filter_examples() {
    let tax = taxonomy();
    let blocked: Vec<String> = DEFAULT_BLOCKED.iter().map(|s| s.to_string()).collect();
    let e = HashingEmbedder::new(256);
    let r = semantic_filter(&signal("breaking news today", "news", 2.0), 0.5, &tax, &blocked, &e);
    assert_eq!(r.p, 0.0);
    assert!(!r.keep);
    let r = semantic_filter(&signal("nail art", "beauty", 0.5), 1.0, &tax, &blocked, &e);
    assert_eq!(r.p, 1.0);
    assert!(r.keep);
    for t in [signal("zzz qqq", "misc", 0.5), signal("breaking news", "news", 0.5)] {
        let r = semantic_filter(&t, 0.0, &tax, &blocked, &e);
        assert!(r.p >= 0.0 && r.p <= 1.0);
        assert!(r.keep);
    }
}

#[test]
fn expansion_examples() {
    let tax = taxonomy();
    let t = signal("sage green", "fashion", 0.5);
    let qs = expand_query(&t, &tax, &LongMemory::new(), 3, 1).unwrap();
    assert_eq!(qs.len(), 3);
    let texts: std::collections::HashSet<_> = qs.iter().map(|q| q.text.clone()).collect();
    assert_eq!(texts.len(), 3);
    assert!(qs.iter().all(|q| q.text.contains("sage green")));
    assert!(expand_query(&t, &tax, &LongMemory::new(), 0, 1).unwrap().is_empty());
    assert!(expand_query(&t, &Taxonomy::default(), &LongMemory::new(), 3, 1).is_err());

    let mut mem = LongMemory::new();
    let mut rec = TermRecord {
        category: "fashion".into(),
        ..TermRecord::default()
    };
    rec.exemplars.insert(QueryCategory::UseCase, vec!["{term} capsule wardrobe".into()]);
    mem.insert("linen dress".into(), rec);
    let qs = expand_query(&t, &tax, &mem, 3, 1).unwrap();
    assert!(qs.iter().any(|q| q.text == "sage green capsule wardrobe" && q.category == QueryCategory::UseCase));
}

#[test]
fn validated_shapes_feed_later_episodes() {
    let cfg = AgentConfig::default();
    let ep = run_episode(&cfg, &mock(vec![feed_record("fall nails", "beauty", 0.9)]), LongMemory::new()).unwrap();
    let rec = &ep.state.long_memory["fall nails"];
    assert_eq!(rec.accepted, cfg.expansions as u32);
    assert!(rec.exemplars.values().flatten().all(|s| s.contains("{term}")));
    let shapes: Vec<String> = rec.exemplars.values().flatten().cloned().collect();
    let start = ep.state.long_memory.clone();
    let next = run_episode(&cfg, &mock(vec![feed_record("nail art", "beauty", 0.9)]), start.clone()).unwrap();
    for q in &next.queries {
        let shape = q.text.replace("nail art", "{term}");
        assert!(shapes.contains(&shape), "{} not from memory", q.text);
    }
    audit(&cfg, &start, &next);
}

fn synthetic_tools_setup() -> (SynthConfig, geo_forge::synth::SynthCorpus, geo_forge::encoders::EncoderBundle, HnswIndex) {
    let cfg = SynthConfig::default();
    let synth = generate(&cfg);
    let bundle = train_encoder(&EncoderConfig::default(), &synth.corpus, LossKind::PinClip).unwrap().bundle;
    let pins: Vec<_> = synth.corpus.pins.iter().collect();
    let vs = bundle.encode_pins(&pins).unwrap();
    let index = build(pins.iter().map(|p| p.signature).zip(vs), HnswParams::default(), 1).unwrap();
    (cfg, synth, bundle, index)
}

#[test]
fn lookup_and_full_episode_on_synthetic_corpus() {
    let (cfg, synth, bundle, index) = synthetic_tools_setup();
    let corpus = &synth.corpus;
    let q = |t: &str| QueryRecord::new(t, QueryCategory::Description, "en-US").unwrap();

    let empty = HnswIndex::new(HnswParams::default(), 0).unwrap();
    let r = content_lookup(&q("anything"), &empty, &bundle, corpus, 0, 0.4, 100).unwrap();
    assert_eq!((r.count, r.sufficient), (0, false));

    let mut inside = 0usize;
    for (i, c) in synth.clusters.iter().enumerate() {
        let r = content_lookup(&q(&c.topic), &index, &bundle, corpus, 25, 0.4, 100).unwrap();
        inside += r.count;
        if i == 0 {
            let r0 = content_lookup(&q(&c.topic), &index, &bundle, corpus, 0, 0.4, 100).unwrap();
            assert!(r0.count >= 1 && r0.sufficient);
        }
    }
    let held_out = held_out_topics(&cfg, synth.clusters.len());
    let outside: usize = held_out
        .iter()
        .map(|t| content_lookup(&q(t), &index, &bundle, corpus, 25, 0.4, 100).unwrap().count)
        .sum();
    eprintln!("in-cluster hits {inside}, out-of-cluster hits {outside}");
    assert!(inside > outside, "{inside} vs {outside}");

    let config = AgentConfig::default();
    let tools = RuleTools::new(FileTrendFeed { records: synth.trends.clone() }, synth.taxonomy.clone(), corpus.dims.text, 3)
        .with_index(&index, &bundle, corpus);
    let ep = run_episode(&config, &tools, LongMemory::new()).unwrap();
    eprintln!("{} queries from {} trends", ep.queries.len(), ep.state.trends.len());
    assert!(!ep.queries.is_empty());
    audit(&config, &LongMemory::new(), &ep);
    let again = run_episode(&config, &tools, LongMemory::new()).unwrap();
    assert_eq!(trace_bytes(&ep.trace), trace_bytes(&again.trace));
}

fn arb_feed() -> impl Strategy<Value = Vec<TrendFeedRecord>> {
    let terms = prop::sample::select(vec![
        "fall nails", "nail art", "sage green", "linen dress", "election results", "football scores", "zzz",
    ]);
    let cats = prop::sample::select(vec!["beauty", "fashion", "news", "sports", "politics", "misc"]);
    let regions = prop::sample::select(vec!["US", "GB"]);
    prop::collection::vec((terms, cats, regions, -0.5f64..2.0), 0..10).prop_map(|v| {
        v.into_iter()
            .map(|(t, c, r, vel)| {
                let mut rec = feed_record(t, c, vel);
                rec.region = r.into();
                rec
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_hold_invariants(feed in arb_feed(), count in 0usize..60, fail in any::<bool>()) {
        let cfg = AgentConfig::default();
        let mut tools = mock(feed);
        tools.count = count;
        if fail {
            tools.fail_region = Some("GB".into());
        }
        let ep = run_episode(&cfg, &tools, LongMemory::new()).unwrap();
        audit(&cfg, &LongMemory::new(), &ep);
        let again = run_episode(&cfg, &tools, LongMemory::new()).unwrap();
        prop_assert_eq!(trace_bytes(&ep.trace), trace_bytes(&again.trace));
    }
}
