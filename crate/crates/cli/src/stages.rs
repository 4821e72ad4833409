//! One function per stage. Each reads its inputs from files in the output
//! directory and writes its artifacts back there.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use geo_forge::agent::{self, AgentConfig, FileTrendFeed, LongMemory, RuleTools, Taxonomy};
use geo_forge::ann::{self, HnswIndex, HnswParams};
use geo_forge::collections::{
    build_collection, intent_satisfying_rate, read_collections, slugify, write_collections, Collection, EmbeddingJudge,
};
use geo_forge::curation::{curate, retain, CurationConfig};
use geo_forge::encoders::{train_encoder, EncoderBundle, EncoderConfig};
use geo_forge::linkgraph::{
    build_link_graph, export_sitemap, link_report, pagerank, LinkGraph, LinkReport, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE,
};
use geo_forge::model::corpus::{read_jsonl, write_jsonl};
use geo_forge::model::records::{Label, LabeledPair, QueryRecord, Signature};
use geo_forge::model::seed::{stage_rng, sub_seed, Stage};
use geo_forge::model::{load_corpus, Corpus, CorpusManifest, HashingEmbedder};
use geo_forge::ranker::{
    correct_rank, rank_annotations, train_ranker, Annotation, PinFeatures, QueryFeatures, RankerModel, RankerTrainConfig,
    RankerTriplet, TowerConfig,
};
use geo_forge::synth::{self, SynthConfig};

use crate::config::{kind_name, LinkMode, PipelineConfig};
use crate::stage::*;

#[derive(Debug, Clone, PartialEq)]
pub enum StageError {
    /// A required input is absent.
    Missing { artifact: PathBuf },
    Failed(String),
}

impl Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StageError::Missing { artifact } => write!(f, "missing artifact {}", artifact.display()),
            StageError::Failed(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for StageError {}

fn fail(e: impl Display) -> StageError {
    StageError::Failed(e.to_string())
}

fn fail_at(path: &Path) -> impl Fn(String) -> StageError + '_ {
    move |e| StageError::Failed(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StageError> {
    let text = serde_json::to_string_pretty(value).map_err(fail)?;
    fs::write(path, text + "\n").map_err(|e| fail_at(path)(e.to_string()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StageError> {
    let text = fs::read_to_string(path).map_err(|e| fail_at(path)(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| fail_at(path)(e.to_string()))
}

pub struct Ctx<'a> {
    pub cfg: &'a PipelineConfig,
}

impl Ctx<'_> {
    pub fn path(&self, artifact: &str) -> PathBuf {
        self.cfg.out.join(artifact)
    }

    pub fn require(&self, artifact: &str) -> Result<PathBuf, StageError> {
        let p = self.path(artifact);
        if p.exists() {
            Ok(p)
        } else {
            Err(StageError::Missing { artifact: p })
        }
    }

    pub fn manifest(&self) -> Result<CorpusManifest, StageError> {
        let p = self.cfg.manifest_path();
        if !p.exists() {
            return Err(StageError::Missing { artifact: p });
        }
        CorpusManifest::load(&p).map_err(fail)
    }

    pub fn corpus(&self) -> Result<Corpus, StageError> {
        load_corpus(&self.manifest()?).map_err(fail)
    }

    fn encoder(&self) -> Result<EncoderBundle, StageError> {
        EncoderBundle::load(&self.require(ENCODER_CKPT)?).map_err(fail)
    }

    fn index(&self) -> Result<HnswIndex, StageError> {
        HnswIndex::load(&self.require(INDEX)?).map_err(fail)
    }

    fn jsonl<T: for<'de> Deserialize<'de>>(&self, artifact: &str) -> Result<Vec<T>, StageError> {
        read_jsonl(&self.require(artifact)?).map_err(fail)
    }
}

/// Generates the synthetic corpus into `<out>/corpus`.
pub fn gen_corpus(cfg: &PipelineConfig) -> Result<serde_json::Value, StageError> {
    let sc = SynthConfig {
        pins: cfg.synth_pins,
        clusters: cfg.synth_clusters,
        dims: geo_forge::model::Dims {
            visual: cfg.synth_d_v,
            text: cfg.synth_d_t,
            ..Default::default()
        },
        seed: cfg.seed,
        ..Default::default()
    };
    let s = synth::generate(&sc);
    s.write(&cfg.out.join("corpus")).map_err(fail)?;
    Ok(json!({
        "pins": s.corpus.pins.len(),
        "queries": s.corpus.queries.len(),
        "engagement": s.corpus.engagement.len(),
        "labels": s.corpus.labels.len(),
        "clusters": s.clusters.len(),
        "trends": s.trends.len(),
    }))
}

pub fn run_curate(ctx: &Ctx) -> Result<serde_json::Value, StageError> {
    let corpus = ctx.corpus()?;
    let config = CurationConfig {
        top_queries: ctx.cfg.curation_top_queries,
        neg_per_pos: ctx.cfg.curation_neg_per_pos,
        dedup_threshold: ctx.cfg.curation_dedup_threshold,
        seed: sub_seed(ctx.cfg.seed, Stage::Curation),
        ..Default::default()
    };
    let out = curate(&corpus, &config).map_err(fail)?;
    write_jsonl(&ctx.path(CURATED_PAIRS), &out.pairs).map_err(fail)?;
    write_jsonl(&ctx.path(CATALOGUE), &out.catalogue).map_err(fail)?;
    let v = serde_json::to_value(&out.report).map_err(fail)?;
    write_json(&ctx.path(CURATION_REPORT), &v)?;
    Ok(v)
}

pub fn run_encode(ctx: &Ctx) -> Result<serde_json::Value, StageError> {
    let corpus = ctx.corpus()?;
    let c = ctx.cfg;
    let config = EncoderConfig {
        hidden: vec![c.encoder_hidden],
        output_dim: c.encoder_output,
        temperature: c.encoder_temperature,
        batch_size: c.encoder_batch_size,
        steps: c.encoder_steps,
        learning_rate: c.encoder_learning_rate,
        seed: c.seed,
    };
    let trained = train_encoder(&config, &corpus, c.encoder_kind).map_err(fail)?;
    trained.bundle.save(&ctx.path(ENCODER_CKPT), config.temperature).map_err(fail)?;
    trained.log.write_csv(&ctx.path(ENCODER_LOG)).map_err(fail)?;
    let (head, tail) = trained.log.head_tail_means(20).unwrap_or((f64::NAN, f64::NAN));
    let v = json!({
        "kind": kind_name(c.encoder_kind),
        "steps": trained.log.rows.len(),
        "output_dim": trained.bundle.output_dim(),
        "initial_loss": trained.log.initial_loss(),
        "final_loss": trained.log.final_loss(),
        "head_mean_loss": head,
        "tail_mean_loss": tail,
    });
    write_json(&ctx.path(ENCODER_REPORT), &v)?;
    Ok(v)
}

fn recall(approx: &[ann::Neighbor], exact: &[ann::Neighbor]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let want: BTreeSet<u64> = exact.iter().map(|n| n.id).collect();
    approx.iter().filter(|n| want.contains(&n.id)).count() as f64 / want.len() as f64
}

pub fn run_index(ctx: &Ctx) -> Result<serde_json::Value, StageError> {
    let corpus = ctx.corpus()?;
    let encoder = ctx.encoder()?;
    let c = ctx.cfg;
    let pins: Vec<_> = corpus.pins.iter().collect();
    let vectors = encoder.encode_pins(&pins).map_err(fail)?;
    let params = HnswParams::with_m(c.index_m, c.index_ef_construction, c.index_ef_search);
    let items: Vec<_> = corpus.pins.iter().map(|p| p.signature).zip(vectors).collect();
    let index = ann::build(items.iter().cloned(), params, sub_seed(c.seed, Stage::Index)).map_err(fail)?;
    index.save(&ctx.path(INDEX)).map_err(fail)?;

    // recall@10 of the corpus queries, probed through the topic pathway
    let probes: Vec<_> = corpus
        .queries
        .iter()
        .map(|q| encoder.encode_topic(&q.text))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let per_query: Vec<(f64, usize)> = probes
        .par_iter()
        .map(|q| {
            let (got, stats) = index.search_with_stats(q, 10, c.index_ef_search)?;
            let want = ann::brute_force_search(&items, q, 10)?;
            Ok((recall(&got, &want), stats.distance_computations))
        })
        .collect::<Result<_, ann::HnswError>>()
        .map_err(fail)?;
    let n = per_query.len().max(1) as f64;
    let v = json!({
        "pins": index.len(),
        "dim": index.dim(),
        "m": c.index_m,
        "ef_construction": c.index_ef_construction,
        "ef_search": c.index_ef_search,
        "max_level": index.max_level(),
        "probe_queries": per_query.len(),
        "recall_at_10": per_query.iter().map(|r| r.0).sum::<f64>() / n,
        "mean_distance_computations": per_query.iter().map(|r| r.1 as f64).sum::<f64>() / n,
    });
    write_json(&ctx.path(INDEX_REPORT), &v)?;
    Ok(v)
}

/// One triplet per positive pair. The negative is one of the pin's labeled
/// negatives when it has any, else a random catalogue query that is not a
/// positive for the pin.
pub fn build_triplets(
    corpus: &Corpus,
    pairs: &[LabeledPair],
    catalogue: &[QueryRecord],
    embedder: &HashingEmbedder,
    seed: u64,
) -> Result<Vec<RankerTriplet>, StageError> {
    let mut pos: BTreeMap<Signature, Vec<&QueryRecord>> = BTreeMap::new();
    let mut neg: BTreeMap<Signature, Vec<&QueryRecord>> = BTreeMap::new();
    for p in pairs {
        let m = if p.label == Label::Positive { &mut pos } else { &mut neg };
        m.entry(p.pin_signature).or_default().push(&p.query);
    }
    let mut rng = stage_rng(seed, Stage::Ranker);
    let mut out = Vec::new();
    for (sig, qs) in &pos {
        let pin = corpus
            .pin(*sig)
            .ok_or_else(|| fail(format!("curated pair names unknown pin {sig}")))?;
        let features = PinFeatures::from_pin(pin);
        let own: BTreeSet<&str> = qs.iter().map(|q| q.text.as_str()).collect();
        let pool: Vec<&QueryRecord> = catalogue.iter().filter(|q| !own.contains(q.text.as_str())).collect();
        let negs = neg.get(sig).map(Vec::as_slice).unwrap_or(&[]);
        for (i, q) in qs.iter().enumerate() {
            let n = if !negs.is_empty() {
                negs[i % negs.len()]
            } else if !pool.is_empty() {
                pool[rng.random_range(0..pool.len())]
            } else {
                continue;
            };
            out.push(RankerTriplet {
                pin: features.clone(),
                positive: QueryFeatures::from_query(q, embedder),
                negative: QueryFeatures::from_query(n, embedder),
            });
        }
    }
    Ok(out)
}

/// Every fifth triplet is held out.
pub fn split_triplets(all: Vec<RankerTriplet>) -> (Vec<RankerTriplet>, Vec<RankerTriplet>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, t) in all.into_iter().enumerate() {
        if i % 5 == 4 {
            eval.push(t);
        } else {
            train.push(t);
        }
    }
    (train, eval)
}

/// Both annotation sets for every pin: the ranker's re-ranking of the
/// encoder's nearest catalogue queries, and the encoder order alone.
pub fn annotate(
    corpus: &Corpus,
    catalogue: &[QueryRecord],
    encoder: &EncoderBundle,
    model: &RankerModel,
    candidates: usize,
    top_k: usize,
    seed: u64,
) -> Result<(Vec<Annotation>, Vec<Annotation>), StageError> {
    if catalogue.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let embedder = HashingEmbedder::new(corpus.dims.text);
    let qvecs = catalogue
        .iter()
        .map(|q| encoder.encode_topic(&q.text))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let params = HnswParams::default();
    let qindex = ann::build(
        qvecs.into_iter().enumerate().map(|(i, v)| (i as u64, v)),
        params,
        sub_seed(seed, Stage::Index) ^ 1,
    )
    .map_err(fail)?;
    let qfeat: Vec<QueryFeatures> = catalogue.iter().map(|q| QueryFeatures::from_query(q, &embedder)).collect();
    let pins: Vec<_> = corpus.pins.iter().collect();
    let pvecs = encoder.encode_pins(&pins).map_err(fail)?;
    let per_pin: Vec<(Vec<Annotation>, Vec<Annotation>)> = pins
        .par_iter()
        .zip(pvecs.par_iter())
        .map(|(pin, v)| {
            let hits = qindex.search(v, candidates, params.ef_search.max(candidates)).map_err(fail)?;
            let control: Vec<Annotation> = hits
                .iter()
                .take(top_k)
                .enumerate()
                .map(|(i, h)| Annotation {
                    pin_signature: pin.signature,
                    query_text: catalogue[h.id as usize].text.clone(),
                    score: f64::from(h.similarity),
                    rank: i + 1,
                })
                .collect();
            let cands: Vec<(String, QueryFeatures)> = hits
                .iter()
                .map(|h| (catalogue[h.id as usize].text.clone(), qfeat[h.id as usize].clone()))
                .collect();
            let enabled =
                rank_annotations(model, pin.signature, &PinFeatures::from_pin(pin), &cands, top_k).map_err(fail)?;
            Ok((enabled, control))
        })
        .collect::<Result<_, StageError>>()?;
    let (mut enabled, mut control) = (Vec::new(), Vec::new());
    for (e, c) in per_pin {
        enabled.extend(e);
        control.extend(c);
    }
    Ok((enabled, control))
}

pub fn run_rank(ctx: &Ctx) -> Result<serde_json::Value, StageError> {
    let corpus = ctx.corpus()?;
    let pairs: Vec<LabeledPair> = ctx.jsonl(CURATED_PAIRS)?;
    let catalogue: Vec<QueryRecord> = ctx.jsonl(CATALOGUE)?;
    let encoder = ctx.encoder()?;
    let c = ctx.cfg;
    let embedder = HashingEmbedder::new(corpus.dims.text);
    let all = build_triplets(&corpus, &pairs, &catalogue, &embedder, c.seed)?;
    let (train, eval) = split_triplets(all);
    if train.is_empty() || eval.is_empty() {
        return Err(fail(format!(
            "too few triplets to train and evaluate ({} train, {} held out)",
            train.len(),
            eval.len()
        )));
    }
    let tower = TowerConfig::new(corpus.dims.visual, corpus.dims.text).with_width_multiplier(c.ranker_width);
    let untrained = RankerModel::init(tower.clone(), c.seed).map_err(fail)?;
    let tc = RankerTrainConfig {
        epochs: c.ranker_epochs,
        batch_size: c.ranker_batch_size,
        learning_rate: c.ranker_learning_rate,
        seed: c.seed,
    };
    let trained = train_ranker(&train, tower.clone(), &tc).map_err(fail)?;
    trained.model.save(&ctx.path(RANKER_CKPT)).map_err(fail)?;
    fs::write(ctx.path(RANKER_LOG), trained.log_csv()).map_err(fail)?;

    let (enabled, control) = annotate(
        &corpus,
        &catalogue,
        &encoder,
        &trained.model,
        c.ranker_candidates,
        c.ranker_top_k,
        c.seed,
    )?;
    write_jsonl(&ctx.path(ANNOTATIONS), &enabled).map_err(fail)?;
    write_jsonl(&ctx.path(ANNOTATIONS_CONTROL), &control).map_err(fail)?;

    let distinct = |a: &[Annotation]| a.iter().map(|x| x.query_text.as_str()).collect::<BTreeSet<_>>().len();
    let v = json!({
        "hidden": tower.hidden,
        "output": tower.output,
        "width_multiplier": c.ranker_width,
        "train_triplets": train.len(),
        "eval_triplets": eval.len(),
        "steps": trained.log.len(),
        "final_loss": trained.log.last().map(|r| r.loss),
        "correct_rank": correct_rank(&trained.model, &eval).map_err(fail)?,
        "untrained_correct_rank": correct_rank(&untrained, &eval).map_err(fail)?,
        "annotations": enabled.len(),
        "distinct_annotation_queries": distinct(&enabled),
        "control_distinct_annotation_queries": distinct(&control),
    });
    write_json(&ctx.path(RANKER_REPORT), &v)?;
    Ok(v)
}

/// Catalogue queries ordered by impressions summed over retained engagement,
/// most first, at most one per slug.
pub fn select_topics(corpus: &Corpus, catalogue: &[QueryRecord], n: usize) -> Vec<QueryRecord> {
    let mut imp: HashMap<&str, u64> = HashMap::new();
    for e in corpus.engagement.iter().filter(|e| retain(e)) {
        *imp.entry(e.query_text.as_str()).or_default() += e.impressions;
    }
    let mut ranked: Vec<(&QueryRecord, u64)> = catalogue
        .iter()
        .filter_map(|q| imp.get(q.text.as_str()).map(|&i| (q, i)))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.text.cmp(&b.0.text)));
    let mut slugs = BTreeSet::new();
    ranked
        .into_iter()
        .filter(|(q, _)| {
            let s = slugify(&q.text);
            !s.is_empty() && slugs.insert(s)
        })
        .take(n)
        .map(|(q, _)| q.clone())
        .collect()
}

pub fn run_collect(ctx: &Ctx) -> Result<serde_json::Value, StageError> {
    let corpus = ctx.corpus()?;
    let catalogue: Vec<QueryRecord> = ctx.jsonl(CATALOGUE)?;
    let encoder = ctx.encoder()?;
    let index = ctx.index()?;
    let c = ctx.cfg;
    let topics = select_topics(&corpus, &catalogue, c.collections_topics);
    if topics.is_empty() {
        return Err(fail("no catalogue query has retained impressions"));
    }
    let judge = EmbeddingJudge {
        encoder: &encoder,
        threshold: c.collections_judge_threshold,
    };
    let built: Vec<(Collection, f64)> = topics
        .par_iter()
        .map(|t| {
            let col = build_collection(t, &encoder, &index, c.collections_k)?;
            let rate = intent_satisfying_rate(&col, &corpus, &judge)?;
            Ok((col, rate.rate))
        })
        .collect::<Result<_, geo_forge::collections::CollectionError>>()
        .map_err(fail)?;
    let collections: Vec<Collection> = built.iter().map(|(c, _)| c.clone()).collect();
    write_collections(&ctx.path(COLLECTIONS), &collections).map_err(fail)?;
    let rates: BTreeMap<&str, f64> = built.iter().map(|(c, r)| (c.slug.as_str(), *r)).collect();
    let v = json!({
        "collections": collections.len(),
        "k": c.collections_k,
        "judge_threshold": c.collections_judge_threshold,
        "mean_intent_rate": built.iter().map(|(_, r)| r).sum::<f64>() / built.len() as f64,
        "intent_rate": rates,
    });
    write_json(&ctx.path(COLLECTIONS_REPORT), &v)?;
    Ok(v)
}

/// Graph and authority for one annotation condition.
pub struct Linked {
    pub graph: LinkGraph,
    pub report: LinkReport,
    pub resolved: usize,
    pub dangling: usize,
    /// Annotated pins per collection slug.
    pub tagged: HashMap<String, Vec<Signature>>,
}

pub fn link_condition(
    pins: &[Signature],
    annotations: &[Annotation],
    collections: &[Collection],
    damping: f64,
) -> Result<Linked, StageError> {
    let (graph, build) = build_link_graph(pins, annotations, collections);
    let scores = pagerank(&graph, damping, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).map_err(fail)?;
    let report = link_report(&graph, &scores);
    let slugs: BTreeSet<&str> = collections.iter().map(|c| c.slug.as_str()).collect();
    let mut tagged: HashMap<String, Vec<Signature>> = HashMap::new();
    for a in annotations {
        let s = slugify(&a.query_text);
        if slugs.contains(s.as_str()) {
            tagged.entry(s).or_default().push(a.pin_signature);
        }
    }
    for v in tagged.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    Ok(Linked {
        graph,
        report,
        resolved: build.resolved,
        dangling: build.dangling.len(),
        tagged,
    })
}

fn annotations_for(ctx: &Ctx, mode: LinkMode) -> Result<Vec<Annotation>, StageError> {
    match mode {
        LinkMode::Enabled => ctx.jsonl(ANNOTATIONS),
        LinkMode::Control => ctx.jsonl(ANNOTATIONS_CONTROL),
        LinkMode::Ablation => Ok(Vec::new()),
    }
}

pub fn run_link(ctx: &Ctx) -> Result<serde_json::Value, StageError> {
    let collections = read_collections(&ctx.require(COLLECTIONS)?).map_err(fail)?;
    for a in [ANNOTATIONS, ANNOTATIONS_CONTROL] {
        ctx.require(a)?;
    }
    let corpus = ctx.corpus()?;
    let c = ctx.cfg;
    let pins: Vec<Signature> = corpus.pins.iter().map(|p| p.signature).collect();
    let anns = annotations_for(ctx, c.link_mode)?;
    let l = link_condition(&pins, &anns, &collections, c.link_damping)?;
    l.graph.write_jsonl(&ctx.path(GRAPH)).map_err(fail)?;
    let xml = export_sitemap(&l.graph, &c.link_base_url).map_err(fail)?;
    fs::write(ctx.path(SITEMAP), xml).map_err(fail)?;
    let pages = ctx.path(PAGES);
    if pages.exists() {
        fs::remove_dir_all(&pages).map_err(fail)?;
    }
    geo_forge::collections::emit_pages(&pages, &collections, &l.tagged).map_err(fail)?;
    let mut v = serde_json::to_value(&l.report).map_err(fail)?;
    v["mode"] = json!(c.link_mode.as_str());
    v["resolved_annotations"] = json!(l.resolved);
    v["dangling_annotations"] = json!(l.dangling);
    write_json(&ctx.path(LINK_REPORT), &v)?;
    Ok(v)
}

pub fn run_agent(ctx: &Ctx) -> Result<serde_json::Value, StageError> {
    let manifest = ctx.manifest()?;
    let trends = manifest.trends.clone().ok_or_else(|| fail("corpus manifest names no trends file"))?;
    let taxonomy_path = manifest
        .taxonomy
        .clone()
        .ok_or_else(|| fail("corpus manifest names no taxonomy file"))?;
    for p in [&trends, &taxonomy_path] {
        if !p.exists() {
            return Err(StageError::Missing { artifact: p.clone() });
        }
    }
    let corpus = load_corpus(&manifest).map_err(fail)?;
    let encoder = ctx.encoder()?;
    let index = ctx.index()?;
    let c = ctx.cfg;
    let feed = FileTrendFeed::load(&trends).map_err(fail)?;
    let taxonomy: Taxonomy = read_json(&taxonomy_path)?;
    let tools =
        RuleTools::new(feed, taxonomy, corpus.dims.text, sub_seed(c.seed, Stage::Agent)).with_index(&index, &encoder, &corpus);
    let config = AgentConfig {
        filter_threshold: c.agent_filter_threshold,
        velocity_floor: c.agent_velocity_floor,
        min_count: c.agent_min_count,
        expansions: c.agent_expansions,
        ..Default::default()
    };
    let memory: LongMemory = match &c.agent_memory {
        Some(p) => agent::load_long_memory(p).map_err(fail)?,
        None => LongMemory::new(),
    };
    let ep = agent::run_episode(&config, &tools, memory).map_err(fail)?;
    agent::write_trace(&ctx.path(AGENT_TRACE), &ep.trace).map_err(fail)?;
    agent::write_queries(&ctx.path(TREND_QUERIES), &ep.queries).map_err(fail)?;
    agent::save_long_memory(&ctx.path(LONG_MEMORY), &ep.state.long_memory).map_err(fail)?;
    let tool_errors = ep
        .trace
        .iter()
        .filter(|e| matches!(e.observation, agent::Observation::ToolError { .. }))
        .count();
    let v = json!({
        "trends": ep.state.trends.len(),
        "kept": ep.state.kept.len(),
        "candidates": ep.state.candidates.len(),
        "emitted": ep.queries.len(),
        "trace_entries": ep.trace.len(),
        "tool_errors": tool_errors,
        "remembered_terms": ep.state.long_memory.len(),
    });
    write_json(&ctx.path(AGENT_REPORT), &v)?;
    Ok(v)
}
