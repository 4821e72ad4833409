//! Trend-mining agent: a fixed five-node plan driven through an explicit,
//! replayable state transition.

mod state;
mod tools;
mod types;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use state::{transition, Action, AgentState, Candidate, FetchCall, MemoryEntry, Node, Observation, TransitionError};
pub use tools::{
    content_lookup, expand_query, semantic_filter, FileTrendFeed, LookupResult, Relevance, RuleTools, ToolError, ToolSuite,
    DEFAULT_BLOCKED,
};
pub use types::{LongMemory, Taxonomy, TermRecord, TrendFeedRecord, TrendSignal};

use crate::model::corpus::{read_jsonl, write_jsonl, CorpusError};
use crate::model::records::QueryRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub regions: Vec<String>,
    pub timespans: Vec<String>,
    pub filter_threshold: f64,
    /// Minimum relative growth for a trend to count as current.
    pub velocity_floor: f64,
    /// Retrievable pins a query needs (strictly more than this).
    pub min_count: usize,
    pub expansions: usize,
    pub blocked_categories: Vec<String>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            regions: vec!["US".into(), "GB".into()],
            timespans: vec!["7d".into(), "30d".into()],
            filter_threshold: 0.5,
            velocity_floor: 0.2,
            min_count: 25,
            expansions: 3,
            blocked_categories: DEFAULT_BLOCKED.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("planning failed: {0}")]
    Planning(String),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub queries: Vec<QueryRecord>,
    pub trace: Vec<MemoryEntry>,
    pub state: AgentState,
}

fn plan(config: &AgentConfig) -> Result<Vec<FetchCall>, AgentError> {
    if config.regions.is_empty() || config.timespans.is_empty() {
        return Err(AgentError::Planning("no region or timespan to fetch".into()));
    }
    if !(0.0..=1.0).contains(&config.filter_threshold) {
        return Err(AgentError::Planning(format!("filter threshold {} outside [0, 1]", config.filter_threshold)));
    }
    let mut calls: Vec<FetchCall> = config
        .regions
        .iter()
        .flat_map(|r| {
            config.timespans.iter().map(move |t| FetchCall {
                region: r.clone(),
                timespan: t.clone(),
            })
        })
        .collect();
    calls.sort();
    calls.dedup();
    Ok(calls)
}

fn tool_error(e: ToolError) -> Observation {
    Observation::ToolError { message: e.to_string() }
}

struct Driver {
    state: AgentState,
}

impl Driver {
    fn step(&mut self, action: Action, observation: Observation) -> Result<(), AgentError> {
        self.state = transition(&self.state, &action, &observation)?;
        Ok(())
    }

    fn advance(&mut self) -> Result<(), AgentError> {
        let to = self.state.cursor.next().expect("not at the last node");
        self.step(Action::Advance { to }, Observation::Moved)
    }
}

/// Runs one episode. Tool failures are recorded and skipped; only planning
/// failures abort. Every action goes through [`transition`], so the trace
/// replays to the same final state.
pub fn run_episode(config: &AgentConfig, tools: &dyn ToolSuite, long_memory: LongMemory) -> Result<Episode, AgentError> {
    let mut d = Driver {
        state: AgentState::new(long_memory),
    };

    let calls = plan(config)?;
    d.step(Action::Plan, Observation::Plan { calls })?;
    d.advance()?;

    for call in d.state.plan.clone() {
        let obs = match tools.fetch_trends(&call.region, &call.timespan) {
            Ok(signals) => Observation::Trends { signals },
            Err(e) => tool_error(e),
        };
        d.step(
            Action::FetchTrends {
                region: call.region,
                timespan: call.timespan,
            },
            obs,
        )?;
    }
    d.advance()?;

    for trend in d.state.trends.clone() {
        let blocked = config.blocked_categories.iter().any(|b| b.eq_ignore_ascii_case(&trend.category));
        let velocity_ok = trend.velocity >= config.velocity_floor;
        let obs = match tools.semantic_filter(&trend, config.filter_threshold) {
            Ok(r) => Observation::Relevance {
                p: r.p,
                keep: r.keep,
                blocked,
                velocity_ok,
                pass: r.keep && !blocked && velocity_ok,
            },
            Err(e) => tool_error(e),
        };
        d.step(Action::SemanticFilter { term: trend.term }, obs)?;
    }
    d.advance()?;

    for trend in d.state.kept.clone() {
        let obs = match tools.expand_query(&trend, &d.state.long_memory, config.expansions) {
            Ok(queries) => Observation::Expansions { queries },
            Err(e) => tool_error(e),
        };
        d.step(Action::ExpandQuery { term: trend.term }, obs)?;
    }
    d.advance()?;

    for cand in d.state.candidates.clone() {
        let obs = match tools.content_lookup(&cand.query, config.min_count) {
            Ok(r) => Observation::Lookup {
                count: r.count,
                mean_quality: r.mean_quality,
                sufficient: r.sufficient,
            },
            Err(e) => tool_error(e),
        };
        d.step(
            Action::ContentLookup {
                term: cand.term,
                query: cand.query.text,
            },
            obs,
        )?;
    }

    Ok(Episode {
        queries: d.state.emitted.clone(),
        trace: d.state.short_memory.clone(),
        state: d.state,
    })
}

/// Rebuilds the final state from the starting long memory and a trace.
pub fn replay(long_memory: LongMemory, trace: &[MemoryEntry]) -> Result<AgentState, TransitionError> {
    let mut s = AgentState::new(long_memory);
    for e in trace {
        if e.node != s.cursor {
            return Err(TransitionError::NotPermitted {
                node: s.cursor,
                action: e.action.clone(),
            });
        }
        s = transition(&s, &e.action, &e.observation)?;
    }
    Ok(s)
}

/// The trace as JSON lines, the exact bytes written to `agent_trace.jsonl`.
pub fn trace_bytes(trace: &[MemoryEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in trace {
        serde_json::to_writer(&mut out, e).expect("trace entries serialize");
        out.push(b'\n');
    }
    out
}

pub fn write_trace(path: &Path, trace: &[MemoryEntry]) -> Result<(), AgentError> {
    fs::write(path, trace_bytes(trace))?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<MemoryEntry>, AgentError> {
    Ok(read_jsonl(path)?)
}

pub fn write_queries(path: &Path, queries: &[QueryRecord]) -> Result<(), AgentError> {
    Ok(write_jsonl(path, queries)?)
}

/// Missing file reads as empty memory.
pub fn load_long_memory(path: &Path) -> Result<LongMemory, AgentError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(serde_json::from_str(&s)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(LongMemory::new()),
        Err(e) => Err(e.into()),
    }
}

pub fn save_long_memory(path: &Path, memory: &LongMemory) -> Result<(), AgentError> {
    fs::write(path, serde_json::to_string_pretty(memory)? + "\n")?;
    Ok(())
}
