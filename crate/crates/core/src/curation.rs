//! Training-data curation: the search-performance retention filter, top-query
//! selection, category-stratified sampling, ranker labeling with navboost
//! promotion, and embedding-based query deduplication.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::corpus::Corpus;
use crate::model::records::{
    EngagementRecord, Label, LabeledPair, PairSource, QueryCategory, QueryRecord, Signature,
};
use crate::model::seed::rng;
use crate::model::vector::{dot, normalize_slice};

pub const HIGH_IMPRESSIONS: u64 = 1000;
pub const MIN_IMPRESSIONS: u64 = 10;
pub const MIN_CTR: f64 = 0.8;
pub const MAX_POSITION: f64 = 10.0;
pub const DEFAULT_TOP_QUERIES: usize = 30;
/// Pairs with navboost coverage strictly above this are promoted to positives.
pub const NAVBOOST_PROMOTION: f64 = 0.54;
/// Hard negatives must have query cosine strictly below this to the positive.
pub const RELATEDNESS_CEILING: f64 = 0.5;
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurationError {
    #[error("records span several pins: {0:?}")]
    MixedSignatures(Vec<Signature>),
    #[error("category mix fractions must lie in [0, 1] and sum to 1, got {0:?}")]
    InvalidMix([f64; 3]),
    #[error("no pairs available for required category {0}")]
    EmptyCategory(QueryCategory),
    #[error("query `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("not enough unrelated negatives for positives: {0:?}")]
    StarvedPositives(Vec<(Signature, String)>),
    #[error("top-query count must be at least 1")]
    ZeroTopQueries,
}

/// The three signals the retention filter reads. `ctr` is `None` when the
/// pair has no impressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionSignals {
    pub impressions: u64,
    pub ctr: Option<f64>,
    pub avg_position: f64,
}

impl From<&EngagementRecord> for RetentionSignals {
    fn from(r: &EngagementRecord) -> Self {
        Self {
            impressions: r.impressions,
            ctr: r.ctr(),
            avg_position: r.avg_position,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionBranch {
    HighImpressions,
    HighCtr,
    TopPosition,
}

/// Pure disjunction of the three branches. The impression gate is checked
/// before CTR, so zero-impression pairs never evaluate their undefined CTR.
pub fn retain_signals(s: RetentionSignals) -> bool {
    if s.impressions > HIGH_IMPRESSIONS {
        return true;
    }
    if s.impressions <= MIN_IMPRESSIONS {
        return false;
    }
    s.ctr.is_some_and(|c| c >= MIN_CTR) || s.avg_position <= MAX_POSITION
}

pub fn retain(record: &EngagementRecord) -> bool {
    retain_signals(record.into())
}

/// First branch that fires, in the order the filter lists them; used for
/// per-branch reporting.
pub fn retention_branch(s: RetentionSignals) -> Option<RetentionBranch> {
    if s.impressions > HIGH_IMPRESSIONS {
        Some(RetentionBranch::HighImpressions)
    } else if s.impressions > MIN_IMPRESSIONS && s.ctr.is_some_and(|c| c >= MIN_CTR) {
        Some(RetentionBranch::HighCtr)
    } else if s.impressions > MIN_IMPRESSIONS && s.avg_position <= MAX_POSITION {
        Some(RetentionBranch::TopPosition)
    } else {
        None
    }
}

/// Retained records for one pin, best first: impressions descending, then
/// average position ascending, then query text.
pub fn select_top_queries(
    records: &[EngagementRecord],
    n: usize,
) -> Result<Vec<EngagementRecord>, CurationError> {
    if n == 0 {
        return Err(CurationError::ZeroTopQueries);
    }
    let sigs: HashSet<Signature> = records.iter().map(|r| r.pin_signature).collect();
    if sigs.len() > 1 {
        let mut sigs: Vec<_> = sigs.into_iter().collect();
        sigs.sort_unstable();
        return Err(CurationError::MixedSignatures(sigs));
    }
    let mut kept: Vec<EngagementRecord> = records.iter().filter(|r| retain(r)).cloned().collect();
    kept.sort_by(|a, b| {
        b.impressions
            .cmp(&a.impressions)
            .then(a.avg_position.total_cmp(&b.avg_position))
            .then_with(|| a.query_text.cmp(&b.query_text))
    });
    kept.truncate(n);
    Ok(kept)
}

/// Target share of each query category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMix {
    pub description: f64,
    pub style_detail: f64,
    pub use_case: f64,
}

impl Default for CategoryMix {
    /// 30% description, 30% style/detail, 40% use case.
    fn default() -> Self {
        Self {
            description: 0.3,
            style_detail: 0.3,
            use_case: 0.4,
        }
    }
}

impl CategoryMix {
    pub fn new(description: f64, style_detail: f64, use_case: f64) -> Result<Self, CurationError> {
        let fr = [description, style_detail, use_case];
        let in_range = fr.iter().all(|f| (0.0..=1.0).contains(f));
        if !in_range || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CurationError::InvalidMix(fr));
        }
        Ok(Self {
            description,
            style_detail,
            use_case,
        })
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.description, self.style_detail, self.use_case]
    }

    /// Largest-remainder apportionment of `total` items. Ties in the
    /// fractional part go to the earlier category.
    pub fn allocate(&self, total: usize) -> [usize; 3] {
        let quotas = self.fractions().map(|f| f * total as f64);
        let mut counts = quotas.map(|q| q.floor() as usize);
        let assigned: usize = counts.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifyReport {
    pub counts: [usize; 3],
    /// Categories whose pool was smaller than the target and were drawn with
    /// replacement.
    pub with_replacement: Vec<QueryCategory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedSample {
    pub pairs: Vec<LabeledPair>,
    pub report: StratifyReport,
}

pub fn stratify_sample(
    pairs: &[LabeledPair],
    mix: &CategoryMix,
    total: usize,
    seed: u64,
) -> Result<StratifiedSample, CurationError> {
    let mut rng = rng(seed);
    let counts = mix.allocate(total);
    let mut pools: [Vec<&LabeledPair>; 3] = Default::default();
    for p in pairs {
        pools[p.query.category.index()].push(p);
    }
    let mut out = Vec::with_capacity(total);
    let mut with_replacement = Vec::new();
    for cat in QueryCategory::ALL {
        let (pool, want) = (&pools[cat.index()], counts[cat.index()]);
        if want == 0 {
            continue;
        }
        if pool.is_empty() {
            return Err(CurationError::EmptyCategory(cat));
        }
        if pool.len() >= want {
            let mut picked = index::sample(&mut rng, pool.len(), want).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|i| pool[i].clone()));
        } else {
            with_replacement.push(cat);
            out.extend((0..want).map(|_| pool[rng.random_range(0..pool.len())].clone()));
        }
    }
    out.shuffle(&mut rng);
    Ok(StratifiedSample {
        pairs: out,
        report: StratifyReport {
            counts,
            with_replacement,
        },
    })
}

/// An unlabeled (pin, query) association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub pin_signature: Signature,
    pub query: QueryRecord,
    pub source: PairSource,
}

pub type NavboostMap = HashMap<(Signature, String), f64>;

/// Labels candidate pairs for ranker training.
///
/// Every positive is emitted with label +1. Pool pairs whose navboost
/// coverage exceeds [`NAVBOOST_PROMOTION`] are promoted to +1. For each
/// positive, `neg_per_pos` distinct queries are drawn uniformly from the pool
/// queries whose embedding cosine to the positive query is below
/// [`RELATEDNESS_CEILING`]; each becomes a -1 pair on the positive's pin.
pub fn label_pairs(
    positives: &[CandidatePair],
    pool: &[CandidatePair],
    navboost: &NavboostMap,
    neg_per_pos: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>, CurationError> {
    let coverage = |sig: Signature, text: &str| -> f64 {
        navboost.get(&(sig, text.to_string())).copied().unwrap_or(0.0)
    };
    let mut out = Vec::new();
    let mut positive_keys: HashSet<(Signature, String)> = HashSet::new();
    for p in positives {
        positive_keys.insert((p.pin_signature, p.query.text.clone()));
        out.push(LabeledPair {
            pin_signature: p.pin_signature,
            query: p.query.clone(),
            label: Label::Positive,
            navboost_coverage: coverage(p.pin_signature, &p.query.text),
            source: p.source,
        });
    }
    for p in pool {
        let key = (p.pin_signature, p.query.text.clone());
        let cov = coverage(p.pin_signature, &p.query.text);
        if cov > NAVBOOST_PROMOTION && !positive_keys.contains(&key) {
            positive_keys.insert(key);
            out.push(LabeledPair {
                pin_signature: p.pin_signature,
                query: p.query.clone(),
                label: Label::Positive,
                navboost_coverage: cov,
                source: p.source,
            });
        }
    }
    if neg_per_pos == 0 {
        return Ok(out);
    }

    // Distinct pool queries in text order, with unit embeddings.
    let mut catalogue: BTreeMap<&str, &QueryRecord> = BTreeMap::new();
    for p in pool {
        catalogue.entry(p.query.text.as_str()).or_insert(&p.query);
    }
    let candidates: Vec<(&QueryRecord, Vec<f32>)> = catalogue
        .into_values()
        .map(|q| Ok((q, unit_embedding(q)?)))
        .collect::<Result<_, CurationError>>()?;

    let mut rng = rng(seed);
    let mut unrelated_cache: HashMap<String, Vec<usize>> = HashMap::new();
    let mut starved = Vec::new();
    let mut negatives = Vec::new();
    for p in positives {
        if !unrelated_cache.contains_key(&p.query.text) {
            let anchor = unit_embedding(&p.query)?;
            let ids = candidates
                .iter()
                .enumerate()
                .filter(|(_, (_, e))| dot(&anchor, e) < RELATEDNESS_CEILING)
                .map(|(i, _)| i)
                .collect();
            unrelated_cache.insert(p.query.text.clone(), ids);
        }
        let eligible: Vec<usize> = unrelated_cache[&p.query.text]
            .iter()
            .copied()
            .filter(|&i| {
                !positive_keys.contains(&(p.pin_signature, candidates[i].0.text.clone()))
            })
            .collect();
        if eligible.len() < neg_per_pos {
            starved.push((p.pin_signature, p.query.text.clone()));
            continue;
        }
        for j in index::sample(&mut rng, eligible.len(), neg_per_pos) {
            let q = candidates[eligible[j]].0;
            negatives.push(LabeledPair {
                pin_signature: p.pin_signature,
                query: q.clone(),
                label: Label::Negative,
                navboost_coverage: coverage(p.pin_signature, &q.text),
                source: PairSource::HardNegative,
            });
        }
    }
    if !starved.is_empty() {
        return Err(CurationError::StarvedPositives(starved));
    }
    out.extend(negatives);
    Ok(out)
}

fn unit_embedding(q: &QueryRecord) -> Result<Vec<f32>, CurationError> {
    let e = q
        .embedding
        .as_ref()
        .ok_or_else(|| CurationError::MissingEmbedding(q.text.clone()))?;
    // a zero embedding is unrelated to everything
    Ok(normalize_slice(e).unwrap_or_else(|_| vec![0.0; e.len()]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub dropped: String,
    pub kept: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dedup {
    pub retained: Vec<QueryRecord>,
    pub merges: Vec<Merge>,
}

/// Greedy single pass in input order: a query is dropped when its cosine to
/// any already-retained query reaches `threshold`.
pub fn dedup_queries(
    queries: &[QueryRecord],
    threshold: f64,
) -> Result<Vec<QueryRecord>, CurationError> {
    dedup_with_merges(queries, threshold).map(|d| d.retained)
}

pub fn dedup_with_merges(queries: &[QueryRecord], threshold: f64) -> Result<Dedup, CurationError> {
    let mut kept: Vec<(usize, Vec<f32>)> = Vec::new();
    let mut merges = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        let e = unit_embedding(q)?;
        let dup = kept
            .iter()
            .map(|(j, k)| (*j, dot(&e, k)))
            .find(|&(_, c)| c >= threshold);
        match dup {
            Some((j, c)) => merges.push(Merge {
                dropped: q.text.clone(),
                kept: queries[j].text.clone(),
                cosine: c,
            }),
            None => kept.push((i, e)),
        }
    }
    Ok(Dedup {
        retained: kept.into_iter().map(|(i, _)| queries[i].clone()).collect(),
        merges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub top_queries: usize,
    pub mix: CategoryMix,
    /// Stratified sample size; defaults to the number of positives.
    pub sample_total: Option<usize>,
    pub neg_per_pos: usize,
    pub dedup_threshold: f64,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            top_queries: DEFAULT_TOP_QUERIES,
            mix: CategoryMix::default(),
            sample_total: None,
            neg_per_pos: 2,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub high_impressions: usize,
    pub high_ctr: usize,
    pub top_position: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub engagement_records: usize,
    pub branch_counts: BranchCounts,
    pub unresolved_queries: usize,
    pub console_positives: usize,
    pub synthetic_positives: usize,
    pub dedup_merges: usize,
    pub catalogue_dedup_merges: usize,
    pub sampled: usize,
    pub sampled_with_replacement: Vec<QueryCategory>,
    /// Positive pairs per category after stratification: description,
    /// style/detail, use case.
    pub category_histogram: [usize; 3],
    pub promoted: usize,
    pub negatives: usize,
    pub total_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurationOutput {
    pub pairs: Vec<LabeledPair>,
    /// Query catalogue after deduplication.
    pub catalogue: Vec<QueryRecord>,
    pub report: CurationReport,
}

/// Runs the whole curation stage over a loaded corpus.
pub fn curate(corpus: &Corpus, config: &CurationConfig) -> Result<CurationOutput, CurationError> {
    let mut report = CurationReport {
        engagement_records: corpus.engagement.len(),
        ..Default::default()
    };
    let by_text: HashMap<&str, &QueryRecord> =
        corpus.queries.iter().map(|q| (q.text.as_str(), q)).collect();

    let mut per_pin: BTreeMap<Signature, Vec<EngagementRecord>> = BTreeMap::new();
    for e in &corpus.engagement {
        match retention_branch(e.into()) {
            Some(RetentionBranch::HighImpressions) => report.branch_counts.high_impressions += 1,
            Some(RetentionBranch::HighCtr) => report.branch_counts.high_ctr += 1,
            Some(RetentionBranch::TopPosition) => report.branch_counts.top_position += 1,
            None => report.branch_counts.rejected += 1,
        }
        per_pin.entry(e.pin_signature).or_default().push(e.clone());
    }

    let mut positives: Vec<CandidatePair> = Vec::new();
    let mut pool: Vec<CandidatePair> = Vec::new();
    let mut unresolved: HashSet<String> = HashSet::new();
    for (sig, records) in &per_pin {
        let top = select_top_queries(records, config.top_queries)?;
        let chosen: HashSet<&str> = top.iter().map(|r| r.query_text.as_str()).collect();
        let mut pin_queries = Vec::new();
        for r in &top {
            match by_text.get(r.query_text.as_str()) {
                Some(q) => pin_queries.push((*q).clone()),
                None => {
                    unresolved.insert(r.query_text.clone());
                }
            }
        }
        let dedup = dedup_with_merges(&pin_queries, config.dedup_threshold)?;
        report.dedup_merges += dedup.merges.len();
        report.console_positives += dedup.retained.len();
        positives.extend(dedup.retained.into_iter().map(|q| CandidatePair {
            pin_signature: *sig,
            query: q,
            source: PairSource::SearchConsole,
        }));
        for r in records.iter().filter(|r| !chosen.contains(r.query_text.as_str())) {
            match by_text.get(r.query_text.as_str()) {
                Some(q) => pool.push(CandidatePair {
                    pin_signature: *sig,
                    query: (*q).clone(),
                    source: PairSource::SearchConsole,
                }),
                None => {
                    unresolved.insert(r.query_text.clone());
                }
            }
        }
    }
    report.unresolved_queries = unresolved.len();

    let mut navboost = NavboostMap::new();
    for l in &corpus.labels {
        navboost.insert((l.pin_signature, l.query.text.clone()), l.navboost_coverage);
        let pair = CandidatePair {
            pin_signature: l.pin_signature,
            query: resolve_embedding(&l.query, &by_text),
            source: l.source,
        };
        match l.label {
            Label::Positive => {
                report.synthetic_positives += 1;
                positives.push(pair);
            }
            Label::Negative => pool.push(pair),
        }
    }

    let catalogue = dedup_with_merges(&corpus.queries, config.dedup_threshold)?;
    report.catalogue_dedup_merges = catalogue.merges.len();
    // Negatives and promotions only draw on deduplicated catalogue queries.
    let kept: HashSet<&str> = catalogue.retained.iter().map(|q| q.text.as_str()).collect();
    pool.retain(|p| kept.contains(p.query.text.as_str()));

    let as_pairs: Vec<LabeledPair> = positives
        .iter()
        .map(|p| LabeledPair {
            pin_signature: p.pin_signature,
            query: p.query.clone(),
            label: Label::Positive,
            navboost_coverage: 0.0,
            source: p.source,
        })
        .collect();
    let total = config.sample_total.unwrap_or(as_pairs.len());
    let sample = stratify_sample(&as_pairs, &config.mix, total, config.seed)?;
    report.sampled = sample.pairs.len();
    report.sampled_with_replacement = sample.report.with_replacement.clone();
    report.category_histogram = sample.report.counts;
    let sampled: Vec<CandidatePair> = sample
        .pairs
        .into_iter()
        .map(|p| CandidatePair {
            pin_signature: p.pin_signature,
            query: p.query,
            source: p.source,
        })
        .collect();

    let pairs = label_pairs(
        &sampled,
        &pool,
        &navboost,
        config.neg_per_pos,
        config.seed.wrapping_add(1),
    )?;
    report.negatives = pairs.iter().filter(|p| p.label == Label::Negative).count();
    report.promoted = pairs.len() - report.negatives - sampled.len();
    report.total_pairs = pairs.len();
    Ok(CurationOutput {
        pairs,
        catalogue: catalogue.retained,
        report,
    })
}

fn resolve_embedding(q: &QueryRecord, by_text: &HashMap<&str, &QueryRecord>) -> QueryRecord {
    if q.embedding.is_some() {
        return q.clone();
    }
    match by_text.get(q.text.as_str()) {
        Some(found) => (*found).clone(),
        None => q.clone(),
    }
}
