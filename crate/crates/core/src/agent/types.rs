use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::records::QueryCategory;

/// One external trend observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSignal {
    pub term: String,
    pub region: String,
    pub timespan: String,
    /// Relative growth over the timespan.
    pub velocity: f64,
    pub category: String,
}

/// A line of `trends.jsonl`. Either `velocity` is given directly or it is
/// derived from a scripted `lifecycle` curve as the relative growth of its
/// last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFeedRecord {
    pub term: String,
    pub region: String,
    pub timespan: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifecycle: Option<Vec<f64>>,
}

impl TrendFeedRecord {
    /// `None` when the record has neither a finite velocity nor a usable curve.
    pub fn to_signal(&self) -> Option<TrendSignal> {
        let velocity = match (self.velocity, &self.lifecycle) {
            (Some(v), _) => v,
            (None, Some(curve)) if curve.len() >= 2 => {
                let prev = curve[curve.len() - 2];
                let last = curve[curve.len() - 1];
                if prev == 0.0 {
                    return None;
                }
                (last - prev) / prev
            }
            _ => return None,
        };
        let term = self.term.trim();
        (velocity.is_finite() && !term.is_empty()).then(|| TrendSignal {
            term: term.to_string(),
            region: self.region.clone(),
            timespan: self.timespan.clone(),
            velocity,
            category: self.category.clone(),
        })
    }
}

/// Platform taxonomy: category name to representative terms.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Taxonomy {
    categories: BTreeMap<String, Vec<String>>,
}

impl Taxonomy {
    pub fn new(categories: BTreeMap<String, Vec<String>>) -> Self {
        Self { categories }
    }

    pub fn is_empty(&self) -> bool {
        self.categories.values().all(|t| t.is_empty())
    }

    pub fn contains_category(&self, category: &str) -> bool {
        self.categories.contains_key(category)
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.categories.values().flatten().map(String::as_str)
    }
}

/// Historical performance of one trend term, written only by validation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TermRecord {
    pub category: String,
    pub validations: u32,
    pub accepted: u32,
    pub mean_quality: f64,
    /// Accepted query shapes with the term replaced by `{term}`, keyed by
    /// query category.
    pub exemplars: BTreeMap<QueryCategory, Vec<String>>,
}

pub type LongMemory = BTreeMap<String, TermRecord>;
