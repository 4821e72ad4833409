use std::path::Path;

use thiserror::Error;

use super::types::{LongMemory, Taxonomy, TrendFeedRecord, TrendSignal};
use crate::ann::HnswIndex;
use crate::encoders::EncoderBundle;
use crate::model::corpus::{read_jsonl, Corpus, CorpusError};
use crate::model::records::{QueryCategory, QueryRecord};
use crate::model::text::{fnv1a, HashingEmbedder};
use crate::model::vector::cosine_slices;

pub const DEFAULT_BLOCKED: [&str; 3] = ["news", "sports", "politics"];

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{tool}: {message}")]
pub struct ToolError {
    pub tool: &'static str,
    pub message: String,
}

impl ToolError {
    pub fn new(tool: &'static str, message: impl Into<String>) -> Self {
        Self {
            tool,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relevance {
    pub p: f64,
    pub keep: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookupResult {
    pub count: usize,
    pub mean_quality: f64,
    pub sufficient: bool,
}

/// The four callables the agent may invoke. Implementations must be
/// deterministic in their inputs.
pub trait ToolSuite {
    fn fetch_trends(&self, region: &str, timespan: &str) -> Result<Vec<TrendSignal>, ToolError>;
    fn semantic_filter(&self, trend: &TrendSignal, threshold: f64) -> Result<Relevance, ToolError>;
    fn content_lookup(&self, query: &QueryRecord, min_count: usize) -> Result<LookupResult, ToolError>;
    fn expand_query(&self, trend: &TrendSignal, long_memory: &LongMemory, n: usize) -> Result<Vec<QueryRecord>, ToolError>;
}

/// Trend feed read from `trends.jsonl`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileTrendFeed {
    pub records: Vec<TrendFeedRecord>,
}

impl FileTrendFeed {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Ok(Self {
            records: read_jsonl(path)?,
        })
    }

    /// Valid signals for one region and timespan, in file order. Records
    /// without a usable velocity are dropped.
    pub fn fetch(&self, region: &str, timespan: &str) -> Vec<TrendSignal> {
        self.records
            .iter()
            .filter(|r| r.region == region && r.timespan == timespan)
            .filter_map(TrendFeedRecord::to_signal)
            .collect()
    }
}

/// Rule-based relevance: zero for blocked categories, otherwise the best
/// hashed-token cosine to any taxonomy term, halved when the category is not
/// in the taxonomy.
pub fn semantic_filter(
    trend: &TrendSignal,
    threshold: f64,
    taxonomy: &Taxonomy,
    blocked: &[String],
    embedder: &HashingEmbedder,
) -> Relevance {
    let p = if blocked.iter().any(|b| b.eq_ignore_ascii_case(&trend.category)) {
        0.0
    } else {
        let t = embedder.embed(&trend.term);
        let best = taxonomy
            .terms()
            .filter_map(|term| {
                let e = embedder.embed(term);
                if e == t {
                    Some(1.0)
                } else {
                    cosine_slices(&t, &e).ok()
                }
            })
            .fold(0.0f64, f64::max)
            .clamp(0.0, 1.0);
        if taxonomy.contains_category(&trend.category) {
            best
        } else {
            0.5 * best
        }
    };
    Relevance { p, keep: p >= threshold }
}

/// Counts pins among the top `ef` hits whose similarity to the encoded query
/// reaches `floor`. Sufficient means strictly more than `min_count`.
pub fn content_lookup(
    query: &QueryRecord,
    index: &HnswIndex,
    encoder: &EncoderBundle,
    corpus: &Corpus,
    min_count: usize,
    floor: f32,
    ef: usize,
) -> Result<LookupResult, ToolError> {
    if index.is_empty() {
        return Ok(LookupResult {
            count: 0,
            mean_quality: 0.0,
            sufficient: false,
        });
    }
    let probe = encoder
        .encode_topic(&query.text)
        .map_err(|e| ToolError::new("content_lookup", e.to_string()))?;
    let hits = index
        .search(&probe, ef, ef)
        .map_err(|e| ToolError::new("content_lookup", e.to_string()))?;
    let quality: Vec<f64> = hits
        .iter()
        .filter(|h| h.similarity >= floor)
        .map(|h| corpus.pin(h.id).map_or(0.0, |p| f64::from(p.perception_score)))
        .collect();
    let count = quality.len();
    Ok(LookupResult {
        count,
        mean_quality: if count == 0 { 0.0 } else { quality.iter().sum::<f64>() / count as f64 },
        sufficient: count > min_count,
    })
}

const TEMPLATES: [(&str, QueryCategory); 9] = [
    ("{term} ideas", QueryCategory::Description),
    ("{term} aesthetic", QueryCategory::Description),
    ("{term} {category} inspiration", QueryCategory::Description),
    ("{term} {category} details", QueryCategory::StyleDetail),
    ("how to style {term}", QueryCategory::StyleDetail),
    ("{term} color palette", QueryCategory::StyleDetail),
    ("{term} for everyday", QueryCategory::UseCase),
    ("{term} {category} for weekend", QueryCategory::UseCase),
    ("easy {term} for beginners", QueryCategory::UseCase),
];

/// Category-conditioned variants. Shapes that validated before for the same
/// category come first, then the fixed templates starting at an offset
/// derived from `seed` and the term.
pub fn expand_query(
    trend: &TrendSignal,
    taxonomy: &Taxonomy,
    long_memory: &LongMemory,
    n: usize,
    seed: u64,
) -> Result<Vec<QueryRecord>, ToolError> {
    if taxonomy.is_empty() {
        return Err(ToolError::new("expand_query", "taxonomy is empty"));
    }
    let mut shapes: Vec<(String, QueryCategory)> = Vec::new();
    for rec in long_memory.values().filter(|r| r.category == trend.category) {
        for (cat, list) in &rec.exemplars {
            for s in list {
                shapes.push((s.clone(), *cat));
            }
        }
    }
    let offset = (fnv1a(trend.term.as_bytes()) ^ seed) as usize % TEMPLATES.len();
    for i in 0..TEMPLATES.len() {
        let (t, cat) = TEMPLATES[(offset + i) % TEMPLATES.len()];
        shapes.push((t.to_string(), cat));
    }
    let mut out: Vec<QueryRecord> = Vec::with_capacity(n);
    for (shape, cat) in shapes {
        if out.len() == n {
            break;
        }
        let text = shape.replace("{term}", &trend.term).replace("{category}", &trend.category);
        if out.iter().any(|q| q.text == text) {
            continue;
        }
        if let Some(q) = QueryRecord::new(&text, cat, "en-US") {
            out.push(q);
        }
    }
    Ok(out)
}

/// Default tools: a file feed, the rule filter, an index-backed content
/// lookup and the template expander. The lookup fails when no index is
/// attached.
pub struct RuleTools<'a> {
    pub feed: FileTrendFeed,
    pub taxonomy: Taxonomy,
    pub blocked: Vec<String>,
    pub embedder: HashingEmbedder,
    pub index: Option<&'a HnswIndex>,
    pub encoder: Option<&'a EncoderBundle>,
    pub corpus: Option<&'a Corpus>,
    pub relevance_floor: f32,
    pub ef: usize,
    pub seed: u64,
}

impl<'a> RuleTools<'a> {
    pub fn new(feed: FileTrendFeed, taxonomy: Taxonomy, text_dim: usize, seed: u64) -> Self {
        Self {
            feed,
            taxonomy,
            blocked: DEFAULT_BLOCKED.iter().map(|s| s.to_string()).collect(),
            embedder: HashingEmbedder::new(text_dim),
            index: None,
            encoder: None,
            corpus: None,
            relevance_floor: 0.4,
            ef: 100,
            seed,
        }
    }

    pub fn with_index(mut self, index: &'a HnswIndex, encoder: &'a EncoderBundle, corpus: &'a Corpus) -> Self {
        self.index = Some(index);
        self.encoder = Some(encoder);
        self.corpus = Some(corpus);
        self
    }
}

impl ToolSuite for RuleTools<'_> {
    fn fetch_trends(&self, region: &str, timespan: &str) -> Result<Vec<TrendSignal>, ToolError> {
        Ok(self.feed.fetch(region, timespan))
    }

    fn semantic_filter(&self, trend: &TrendSignal, threshold: f64) -> Result<Relevance, ToolError> {
        Ok(semantic_filter(trend, threshold, &self.taxonomy, &self.blocked, &self.embedder))
    }

    fn content_lookup(&self, query: &QueryRecord, min_count: usize) -> Result<LookupResult, ToolError> {
        match (self.index, self.encoder, self.corpus) {
            (Some(i), Some(e), Some(c)) => content_lookup(query, i, e, c, min_count, self.relevance_floor, self.ef),
            _ => Err(ToolError::new("content_lookup", "index unavailable")),
        }
    }

    fn expand_query(&self, trend: &TrendSignal, long_memory: &LongMemory, n: usize) -> Result<Vec<QueryRecord>, ToolError> {
        expand_query(trend, &self.taxonomy, long_memory, n, self.seed)
    }
}
