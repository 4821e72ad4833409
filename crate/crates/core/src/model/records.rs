use std::fmt;

use serde::{Deserialize, Serialize};

pub type Signature = u64;

pub const DEFAULT_VISUAL_DIM: usize = 1028;
pub const DEFAULT_TEXT_DIM: usize = 768;
pub const DEFAULT_RANKER_DIM: usize = 128;

/// One visual asset with its precomputed features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinRecord {
    pub signature: Signature,
    pub visual_embedding: Vec<f32>,
    pub text_embedding: Vec<f32>,
    pub perception_score: f32,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub board_id: Option<u64>,
    pub category: String,
    pub language: String,
}

impl PinRecord {
    /// Title and description joined, the text the pin page exposes.
    pub fn text(&self) -> String {
        if self.description.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.description)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryCategory {
    Description,
    StyleDetail,
    UseCase,
}

impl QueryCategory {
    pub const ALL: [QueryCategory; 3] = [
        QueryCategory::Description,
        QueryCategory::StyleDetail,
        QueryCategory::UseCase,
    ];

    pub fn index(self) -> usize {
        match self {
            QueryCategory::Description => 0,
            QueryCategory::StyleDetail => 1,
            QueryCategory::UseCase => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QueryCategory::Description => "description",
            QueryCategory::StyleDetail => "style_detail",
            QueryCategory::UseCase => "use_case",
        }
    }
}

impl fmt::Display for QueryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub text: String,
    pub category: QueryCategory,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

impl QueryRecord {
    /// Builds a query with trimmed text. Returns `None` for blank text.
    pub fn new(text: &str, category: QueryCategory, language: &str) -> Option<Self> {
        let text = text.trim();
        if text.is_empty() {
            return None;
        }
        Some(Self {
            text: text.to_string(),
            category,
            language: language.to_string(),
            embedding: None,
        })
    }

    pub fn with_embedding(mut self, embedding: Vec<f32>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    /// Whitespace token count, used by the length-normalization feature.
    pub fn token_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Search-performance tuple for one (query, pin) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementRecord {
    pub query_text: String,
    pub pin_signature: Signature,
    pub impressions: u64,
    pub clicks: u64,
    pub avg_position: f64,
}

impl EngagementRecord {
    /// Click-through rate; undefined without impressions.
    pub fn ctr(&self) -> Option<f64> {
        (self.impressions > 0).then(|| self.clicks as f64 / self.impressions as f64)
    }
}

/// Ranker label, persisted as the integers `1` and `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Positive,
    Negative,
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(format!("label must be 1 or -1, got {other}")),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    SearchConsole,
    Synthetic,
    HardNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub pin_signature: Signature,
    pub query: QueryRecord,
    pub label: Label,
    pub navboost_coverage: f64,
    pub source: PairSource,
}
