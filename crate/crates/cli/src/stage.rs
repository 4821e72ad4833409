use std::fmt;
use std::str::FromStr;

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageId {
    Curate,
    Encode,
    Index,
    Rank,
    Collect,
    Link,
    Agent,
    Eval,
}

pub const MANIFEST: &str = "corpus/manifest.txt";
pub const CURATED_PAIRS: &str = "curated_pairs.jsonl";
pub const CATALOGUE: &str = "catalogue.jsonl";
pub const CURATION_REPORT: &str = "curation_report.json";
pub const ENCODER_CKPT: &str = "encoder.ckpt";
pub const ENCODER_LOG: &str = "encoder_log.csv";
pub const ENCODER_REPORT: &str = "encoder_report.json";
pub const INDEX: &str = "index.hnsw";
pub const INDEX_REPORT: &str = "index_report.json";
pub const RANKER_CKPT: &str = "ranker.ckpt";
pub const RANKER_LOG: &str = "ranker_log.csv";
pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const ANNOTATIONS_CONTROL: &str = "annotations_control.jsonl";
pub const RANKER_REPORT: &str = "ranker_report.json";
pub const COLLECTIONS: &str = "collections.jsonl";
pub const COLLECTIONS_REPORT: &str = "collections_report.json";
pub const GRAPH: &str = "graph.jsonl";
pub const SITEMAP: &str = "sitemap.xml";
pub const PAGES: &str = "pages";
pub const LINK_REPORT: &str = "link_report.json";
pub const AGENT_TRACE: &str = "agent_trace.jsonl";
pub const TREND_QUERIES: &str = "trend_queries.jsonl";
pub const LONG_MEMORY: &str = "long_memory.json";
pub const AGENT_REPORT: &str = "agent_report.json";
pub const REPORT: &str = "report.json";
pub const CHECKSUMS: &str = "checksums.json";

impl StageId {
    pub const ALL: [StageId; 8] = [
        StageId::Curate,
        StageId::Encode,
        StageId::Index,
        StageId::Rank,
        StageId::Collect,
        StageId::Link,
        StageId::Agent,
        StageId::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageId::Curate => "curate",
            StageId::Encode => "encode",
            StageId::Index => "index",
            StageId::Rank => "rank",
            StageId::Collect => "collect",
            StageId::Link => "link",
            StageId::Agent => "agent",
            StageId::Eval => "eval",
        }
    }

    /// Artifacts read from the output directory. The corpus manifest is
    /// checked separately.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            StageId::Curate | StageId::Encode => &[],
            StageId::Index => &[ENCODER_CKPT],
            StageId::Rank => &[CURATED_PAIRS, CATALOGUE, ENCODER_CKPT],
            StageId::Collect => &[CATALOGUE, ENCODER_CKPT, INDEX],
            StageId::Link => &[COLLECTIONS, ANNOTATIONS, ANNOTATIONS_CONTROL],
            StageId::Agent => &[ENCODER_CKPT, INDEX],
            StageId::Eval => &[
                CURATION_REPORT,
                ENCODER_REPORT,
                INDEX_REPORT,
                RANKER_REPORT,
                COLLECTIONS_REPORT,
                LINK_REPORT,
                AGENT_REPORT,
                COLLECTIONS,
                ANNOTATIONS,
                ANNOTATIONS_CONTROL,
            ],
        }
    }

    /// Files written on success. `pages` is a directory.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            StageId::Curate => &[CURATED_PAIRS, CATALOGUE, CURATION_REPORT],
            StageId::Encode => &[ENCODER_CKPT, ENCODER_LOG, ENCODER_REPORT],
            StageId::Index => &[INDEX, INDEX_REPORT],
            StageId::Rank => &[RANKER_CKPT, RANKER_LOG, ANNOTATIONS, ANNOTATIONS_CONTROL, RANKER_REPORT],
            StageId::Collect => &[COLLECTIONS, COLLECTIONS_REPORT],
            StageId::Link => &[GRAPH, SITEMAP, PAGES, LINK_REPORT],
            StageId::Agent => &[AGENT_TRACE, TREND_QUERIES, LONG_MEMORY, AGENT_REPORT],
            StageId::Eval => &[REPORT],
        }
    }

    pub fn producer_of(artifact: &str) -> Option<StageId> {
        StageId::ALL.into_iter().find(|s| s.outputs().contains(&artifact))
    }

    /// Stages whose outputs this one reads.
    pub fn upstream(self) -> Vec<StageId> {
        let mut v: Vec<StageId> = self.inputs().iter().filter_map(|a| StageId::producer_of(a)).collect();
        v.sort();
        v.dedup();
        v
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageId::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}
