use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::types::{LongMemory, TermRecord, TrendSignal};
use crate::model::records::QueryRecord;

/// The five orchestration nodes, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Planning,
    Retrieval,
    Filtering,
    Expansion,
    Validation,
}

impl Node {
    pub const ORDER: [Node; 5] = [
        Node::Planning,
        Node::Retrieval,
        Node::Filtering,
        Node::Expansion,
        Node::Validation,
    ];

    pub fn next(self) -> Option<Node> {
        let i = Node::ORDER.iter().position(|&n| n == self).expect("listed");
        Node::ORDER.get(i + 1).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FetchCall {
    pub region: String,
    pub timespan: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Plan,
    FetchTrends { region: String, timespan: String },
    SemanticFilter { term: String },
    ExpandQuery { term: String },
    ContentLookup { term: String, query: String },
    Advance { to: Node },
}

impl Action {
    fn permitted_at(&self, node: Node) -> bool {
        match self {
            Action::Plan => node == Node::Planning,
            Action::FetchTrends { .. } => node == Node::Retrieval,
            Action::SemanticFilter { .. } => node == Node::Filtering,
            Action::ExpandQuery { .. } => node == Node::Expansion,
            Action::ContentLookup { .. } => node == Node::Validation,
            Action::Advance { to } => node.next() == Some(*to),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Observation {
    Plan {
        calls: Vec<FetchCall>,
    },
    Trends {
        signals: Vec<TrendSignal>,
    },
    /// `pass` is the conjunction the filtering node enforces: the filter
    /// kept the trend, its category is not blocked, and it grows fast enough.
    Relevance {
        p: f64,
        keep: bool,
        blocked: bool,
        velocity_ok: bool,
        pass: bool,
    },
    Expansions {
        queries: Vec<QueryRecord>,
    },
    Lookup {
        count: usize,
        mean_quality: f64,
        sufficient: bool,
    },
    ToolError {
        message: String,
    },
    Moved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub node: Node,
    pub action: Action,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub term: String,
    pub query: QueryRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub cursor: Node,
    pub short_memory: Vec<MemoryEntry>,
    pub long_memory: LongMemory,
    pub plan: Vec<FetchCall>,
    /// Retrieved trends, first occurrence of each term.
    pub trends: Vec<TrendSignal>,
    pub kept: Vec<TrendSignal>,
    pub candidates: Vec<Candidate>,
    pub emitted: Vec<QueryRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransitionError {
    #[error("action {action:?} is not permitted at {node:?}")]
    NotPermitted { node: Node, action: Action },
    #[error("observation {observation:?} does not answer {action:?}")]
    Mismatch { action: Action, observation: Observation },
    #[error("unknown trend term {0:?}")]
    UnknownTerm(String),
    #[error("no pending candidate {query:?} for term {term:?}")]
    UnknownCandidate { term: String, query: String },
}

impl AgentState {
    pub fn new(long_memory: LongMemory) -> Self {
        Self {
            cursor: Node::Planning,
            short_memory: Vec::new(),
            long_memory,
            plan: Vec::new(),
            trends: Vec::new(),
            kept: Vec::new(),
            candidates: Vec::new(),
            emitted: Vec::new(),
        }
    }

    pub fn trend(&self, term: &str) -> Option<&TrendSignal> {
        self.trends.iter().find(|t| t.term == term)
    }

    pub fn visited(&self) -> Vec<Node> {
        let mut seen: Vec<Node> = Vec::new();
        for e in &self.short_memory {
            if seen.last() != Some(&e.node) {
                seen.push(e.node);
            }
        }
        if seen.last() != Some(&self.cursor) {
            seen.push(self.cursor);
        }
        seen
    }
}

/// Pure successor function. The returned state always has exactly one more
/// short-memory entry. Long memory changes only on validation lookups.
pub fn transition(state: &AgentState, action: &Action, observation: &Observation) -> Result<AgentState, TransitionError> {
    if !action.permitted_at(state.cursor) {
        return Err(TransitionError::NotPermitted {
            node: state.cursor,
            action: action.clone(),
        });
    }
    let mismatch = || TransitionError::Mismatch {
        action: action.clone(),
        observation: observation.clone(),
    };
    let mut s = state.clone();
    match (action, observation) {
        (Action::Advance { to }, Observation::Moved) => s.cursor = *to,
        (Action::Advance { .. }, _) => return Err(mismatch()),
        (_, Observation::ToolError { .. }) => {}
        (Action::Plan, Observation::Plan { calls }) => {
            let mut calls = calls.clone();
            calls.sort();
            calls.dedup();
            s.plan = calls;
        }
        (Action::FetchTrends { .. }, Observation::Trends { signals }) => {
            let mut seen: BTreeSet<String> = s.trends.iter().map(|t| t.term.clone()).collect();
            for t in signals {
                if seen.insert(t.term.clone()) {
                    s.trends.push(t.clone());
                }
            }
        }
        (Action::SemanticFilter { term }, Observation::Relevance { pass, .. }) => {
            let t = s.trend(term).cloned().ok_or_else(|| TransitionError::UnknownTerm(term.clone()))?;
            if *pass && !s.kept.iter().any(|k| &k.term == term) {
                s.kept.push(t);
            }
        }
        (Action::ExpandQuery { term }, Observation::Expansions { queries }) => {
            if !s.kept.iter().any(|k| &k.term == term) {
                return Err(TransitionError::UnknownTerm(term.clone()));
            }
            for q in queries {
                s.candidates.push(Candidate {
                    term: term.clone(),
                    query: q.clone(),
                });
            }
        }
        (
            Action::ContentLookup { term, query },
            Observation::Lookup {
                mean_quality,
                sufficient,
                ..
            },
        ) => {
            let cand = s
                .candidates
                .iter()
                .find(|c| &c.term == term && &c.query.text == query)
                .cloned()
                .ok_or_else(|| TransitionError::UnknownCandidate {
                    term: term.clone(),
                    query: query.clone(),
                })?;
            let category = s.kept.iter().find(|k| &k.term == term).map(|k| k.category.clone()).unwrap_or_default();
            let rec = s.long_memory.entry(term.clone()).or_insert_with(|| TermRecord {
                category,
                ..TermRecord::default()
            });
            rec.validations += 1;
            if *sufficient {
                rec.accepted += 1;
                rec.mean_quality += (mean_quality - rec.mean_quality) / f64::from(rec.accepted);
                let shape = cand.query.text.replace(term.as_str(), "{term}");
                let shapes = rec.exemplars.entry(cand.query.category).or_default();
                if shape.contains("{term}") && !shapes.contains(&shape) {
                    shapes.push(shape);
                }
                if !s.emitted.iter().any(|q| q.text == cand.query.text) {
                    s.emitted.push(cand.query);
                }
            }
        }
        _ => return Err(mismatch()),
    }
    s.short_memory.push(MemoryEntry {
        node: state.cursor,
        action: action.clone(),
        observation: observation.clone(),
    });
    Ok(s)
}
