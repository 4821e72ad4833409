//! `key=value` pipeline configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use geo_forge::encoders::LossKind;

use crate::stage::StageId;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}: {}", self.origin, self.message)
        } else {
            write!(f, "{}:{}: {}", self.origin, self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkMode {
    Enabled,
    Control,
    Ablation,
}

impl LinkMode {
    pub const ALL: [LinkMode; 3] = [LinkMode::Enabled, LinkMode::Control, LinkMode::Ablation];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkMode::Enabled => "enabled",
            LinkMode::Control => "control",
            LinkMode::Ablation => "ablation",
        }
    }
}

impl FromStr for LinkMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enabled" => Ok(LinkMode::Enabled),
            "control" => Ok(LinkMode::Control),
            "ablation" => Ok(LinkMode::Ablation),
            other => Err(format!("unknown link mode `{other}` (enabled, control, ablation)")),
        }
    }
}

fn parse_kind(s: &str) -> Result<LossKind, String> {
    match s {
        "pinclip" | "pin_clip" => Ok(LossKind::PinClip),
        "searchsage" | "search_sage" => Ok(LossKind::SearchSage),
        other => Err(format!("unknown encoder kind `{other}` (pinclip, searchsage)")),
    }
}

pub fn kind_name(k: LossKind) -> &'static str {
    match k {
        LossKind::PinClip => "pinclip",
        LossKind::SearchSage => "searchsage",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Corpus manifest. Without one the pipeline generates a corpus under
    /// `<out>/corpus`.
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub stages: Vec<StageId>,

    pub synth_pins: usize,
    pub synth_clusters: usize,
    pub synth_d_v: usize,
    pub synth_d_t: usize,

    pub curation_top_queries: usize,
    pub curation_neg_per_pos: usize,
    pub curation_dedup_threshold: f64,

    pub encoder_kind: LossKind,
    pub encoder_steps: usize,
    pub encoder_batch_size: usize,
    pub encoder_learning_rate: f64,
    pub encoder_temperature: f64,
    pub encoder_hidden: usize,
    pub encoder_output: usize,

    pub index_m: usize,
    pub index_ef_construction: usize,
    pub index_ef_search: usize,

    pub ranker_epochs: usize,
    pub ranker_batch_size: usize,
    pub ranker_learning_rate: f64,
    pub ranker_width: f64,
    pub ranker_candidates: usize,
    pub ranker_top_k: usize,

    pub collections_topics: usize,
    pub collections_k: usize,
    pub collections_judge_threshold: f64,

    pub link_base_url: String,
    pub link_mode: LinkMode,
    pub link_damping: f64,

    pub agent_filter_threshold: f64,
    pub agent_velocity_floor: f64,
    pub agent_min_count: usize,
    pub agent_expansions: usize,
    /// Long memory carried in from an earlier episode; none starts empty.
    pub agent_memory: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            out: PathBuf::from("out"),
            seed: 42,
            stages: StageId::ALL.to_vec(),
            synth_pins: 1000,
            synth_clusters: 20,
            synth_d_v: geo_forge::model::records::DEFAULT_VISUAL_DIM,
            synth_d_t: geo_forge::model::records::DEFAULT_TEXT_DIM,
            curation_top_queries: geo_forge::curation::DEFAULT_TOP_QUERIES,
            curation_neg_per_pos: 2,
            curation_dedup_threshold: geo_forge::curation::DEFAULT_DEDUP_THRESHOLD,
            encoder_kind: LossKind::PinClip,
            encoder_steps: 300,
            encoder_batch_size: 128,
            encoder_learning_rate: 0.05,
            encoder_temperature: 0.07,
            encoder_hidden: 128,
            encoder_output: 64,
            index_m: 16,
            index_ef_construction: 200,
            index_ef_search: 100,
            ranker_epochs: 20,
            ranker_batch_size: 64,
            ranker_learning_rate: 0.01,
            ranker_width: 0.125,
            ranker_candidates: 20,
            ranker_top_k: 3,
            collections_topics: 40,
            collections_k: geo_forge::collections::DEFAULT_K,
            collections_judge_threshold: geo_forge::collections::DEFAULT_JUDGE_THRESHOLD,
            link_base_url: "https://example.com/".into(),
            link_mode: LinkMode::Enabled,
            link_damping: geo_forge::linkgraph::DEFAULT_DAMPING,
            agent_filter_threshold: 0.5,
            agent_velocity_floor: 0.2,
            agent_min_count: 25,
            agent_expansions: 3,
            agent_memory: None,
        }
    }
}

pub const KEYS: [&str; 38] = [
    "manifest",
    "out",
    "seed",
    "stages",
    "synth.pins",
    "synth.clusters",
    "synth.d_v",
    "synth.d_t",
    "curation.top_queries",
    "curation.neg_per_pos",
    "curation.dedup_threshold",
    "encoder.kind",
    "encoder.steps",
    "encoder.batch_size",
    "encoder.learning_rate",
    "encoder.temperature",
    "encoder.hidden",
    "encoder.output",
    "index.m",
    "index.ef_construction",
    "index.ef_search",
    "ranker.epochs",
    "ranker.batch_size",
    "ranker.learning_rate",
    "ranker.width",
    "ranker.candidates",
    "ranker.top_k",
    "collections.topics",
    "collections.k",
    "collections.judge_threshold",
    "link.base_url",
    "link.mode",
    "link.damping",
    "agent.filter_threshold",
    "agent.velocity_floor",
    "agent.min_count",
    "agent.expansions",
    "agent.memory",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{key}`: {e}"))
}

fn positive(key: &str, v: &str) -> Result<usize, String> {
    let n: usize = num(key, v)?;
    if n == 0 {
        return Err(format!("`{key}` must be positive"));
    }
    Ok(n)
}

fn unit_interval(key: &str, v: &str) -> Result<f64, String> {
    let x: f64 = num(key, v)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(format!("`{key}` must lie in [0, 1], got {x}"));
    }
    Ok(x)
}

fn positive_f(key: &str, v: &str) -> Result<f64, String> {
    let x: f64 = num(key, v)?;
    if !(x.is_finite() && x > 0.0) {
        return Err(format!("`{key}` must be a positive number, got {x}"));
    }
    Ok(x)
}

pub fn parse_stages(v: &str) -> Result<Vec<StageId>, String> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let s: StageId = part.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err("`stages` lists no stage".into());
    }
    out.sort();
    Ok(out)
}

impl PipelineConfig {
    /// Applies one setting. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let v = value.trim();
        let path = || base.join(v);
        match key {
            "manifest" => self.manifest = Some(path()),
            "out" => self.out = path(),
            "seed" => self.seed = num(key, v)?,
            "stages" => self.stages = parse_stages(v)?,
            "synth.pins" => self.synth_pins = positive(key, v)?,
            "synth.clusters" => self.synth_clusters = positive(key, v)?,
            "synth.d_v" => self.synth_d_v = positive(key, v)?,
            "synth.d_t" => self.synth_d_t = positive(key, v)?,
            "curation.top_queries" => self.curation_top_queries = positive(key, v)?,
            "curation.neg_per_pos" => self.curation_neg_per_pos = num(key, v)?,
            "curation.dedup_threshold" => self.curation_dedup_threshold = unit_interval(key, v)?,
            "encoder.kind" => self.encoder_kind = parse_kind(v)?,
            "encoder.steps" => self.encoder_steps = positive(key, v)?,
            "encoder.batch_size" => self.encoder_batch_size = positive(key, v)?,
            "encoder.learning_rate" => self.encoder_learning_rate = positive_f(key, v)?,
            "encoder.temperature" => self.encoder_temperature = positive_f(key, v)?,
            "encoder.hidden" => self.encoder_hidden = positive(key, v)?,
            "encoder.output" => self.encoder_output = positive(key, v)?,
            "index.m" => self.index_m = positive(key, v)?,
            "index.ef_construction" => self.index_ef_construction = positive(key, v)?,
            "index.ef_search" => self.index_ef_search = positive(key, v)?,
            "ranker.epochs" => self.ranker_epochs = positive(key, v)?,
            "ranker.batch_size" => self.ranker_batch_size = positive(key, v)?,
            "ranker.learning_rate" => self.ranker_learning_rate = positive_f(key, v)?,
            "ranker.width" => self.ranker_width = positive_f(key, v)?,
            "ranker.candidates" => self.ranker_candidates = positive(key, v)?,
            "ranker.top_k" => self.ranker_top_k = positive(key, v)?,
            "collections.topics" => self.collections_topics = positive(key, v)?,
            "collections.k" => self.collections_k = positive(key, v)?,
            "collections.judge_threshold" => self.collections_judge_threshold = unit_interval(key, v)?,
            "link.base_url" => self.link_base_url = v.to_string(),
            "link.mode" => self.link_mode = v.parse()?,
            "link.damping" => {
                let d: f64 = num(key, v)?;
                if !(d > 0.0 && d < 1.0) {
                    return Err(format!("`{key}` must lie in (0, 1), got {d}"));
                }
                self.link_damping = d;
            }
            "agent.filter_threshold" => self.agent_filter_threshold = unit_interval(key, v)?,
            "agent.velocity_floor" => self.agent_velocity_floor = num(key, v)?,
            "agent.min_count" => self.agent_min_count = num(key, v)?,
            "agent.expansions" => self.agent_expansions = positive(key, v)?,
            "agent.memory" => self.agent_memory = Some(path()),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, base: &Path, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError {
                origin: origin.to_string(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            self.set(k.trim(), v, base).map_err(err)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            origin: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut c = Self::default();
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        c.apply_text(&text, base, &path.display().to_string())?;
        Ok(c)
    }

    /// `key=value` override from the command line; paths stay relative to
    /// the working directory.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError {
            origin: "--set".into(),
            line: 0,
            message,
        };
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got `{kv}`")))?;
        self.set(k.trim(), v, Path::new("")).map_err(err)
    }

    /// The config as `key=value` text; `load` of this text yields `self`.
    pub fn to_text(&self) -> String {
        let stages: Vec<&str> = self.stages.iter().map(|s| s.as_str()).collect();
        let mut lines = Vec::new();
        if let Some(m) = &self.manifest {
            lines.push(format!("manifest={}", m.display()));
        }
        lines.push(format!("out={}", self.out.display()));
        lines.push(format!("seed={}", self.seed));
        lines.push(format!("stages={}", stages.join(",")));
        lines.push(format!("synth.pins={}", self.synth_pins));
        lines.push(format!("synth.clusters={}", self.synth_clusters));
        lines.push(format!("synth.d_v={}", self.synth_d_v));
        lines.push(format!("synth.d_t={}", self.synth_d_t));
        lines.push(format!("curation.top_queries={}", self.curation_top_queries));
        lines.push(format!("curation.neg_per_pos={}", self.curation_neg_per_pos));
        lines.push(format!("curation.dedup_threshold={}", self.curation_dedup_threshold));
        lines.push(format!("encoder.kind={}", kind_name(self.encoder_kind)));
        lines.push(format!("encoder.steps={}", self.encoder_steps));
        lines.push(format!("encoder.batch_size={}", self.encoder_batch_size));
        lines.push(format!("encoder.learning_rate={}", self.encoder_learning_rate));
        lines.push(format!("encoder.temperature={}", self.encoder_temperature));
        lines.push(format!("encoder.hidden={}", self.encoder_hidden));
        lines.push(format!("encoder.output={}", self.encoder_output));
        lines.push(format!("index.m={}", self.index_m));
        lines.push(format!("index.ef_construction={}", self.index_ef_construction));
        lines.push(format!("index.ef_search={}", self.index_ef_search));
        lines.push(format!("ranker.epochs={}", self.ranker_epochs));
        lines.push(format!("ranker.batch_size={}", self.ranker_batch_size));
        lines.push(format!("ranker.learning_rate={}", self.ranker_learning_rate));
        lines.push(format!("ranker.width={}", self.ranker_width));
        lines.push(format!("ranker.candidates={}", self.ranker_candidates));
        lines.push(format!("ranker.top_k={}", self.ranker_top_k));
        lines.push(format!("collections.topics={}", self.collections_topics));
        lines.push(format!("collections.k={}", self.collections_k));
        lines.push(format!("collections.judge_threshold={}", self.collections_judge_threshold));
        lines.push(format!("link.base_url={}", self.link_base_url));
        lines.push(format!("link.mode={}", self.link_mode.as_str()));
        lines.push(format!("link.damping={}", self.link_damping));
        lines.push(format!("agent.filter_threshold={}", self.agent_filter_threshold));
        lines.push(format!("agent.velocity_floor={}", self.agent_velocity_floor));
        lines.push(format!("agent.min_count={}", self.agent_min_count));
        lines.push(format!("agent.expansions={}", self.agent_expansions));
        if let Some(m) = &self.agent_memory {
            lines.push(format!("agent.memory={}", m.display()));
        }
        lines.join("\n") + "\n"
    }

    /// The manifest the stages read: the configured one, else the generated
    /// corpus under the output directory.
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.out.join("corpus").join("manifest.txt"))
    }
}
