//! Topic collection pages: probe the pin index with an encoded topic, keep the
//! top hits, and score how many of them a judge accepts.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{HnswError, HnswIndex};
use crate::encoders::{EncoderBundle, EncoderError, LossKind};
use crate::model::corpus::{read_jsonl, write_jsonl, Corpus, CorpusError};
use crate::model::records::{PinRecord, QueryRecord, Signature};
use crate::model::vector::cosine_slices;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_JUDGE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CollectionError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("encoder emits {encoder} dims, index holds {index}")]
    DimMismatch { encoder: usize, index: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("encoding failed: {0}")]
    Encoding(#[from] EncoderError),
    #[error("index: {0}")]
    Index(#[from] HnswError),
    #[error("member {0} is not in the corpus")]
    MissingMember(Signature),
    #[error("collection has no members")]
    NoMembers,
    #[error("no verdict for pin {pin} under topic {topic:?}")]
    MissingVerdict { topic: String, pin: Signature },
    #[error("verdict score for pin {0} is not finite")]
    NonFiniteScore(Signature),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub signature: Signature,
    pub similarity: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collection {
    pub slug: String,
    pub topic: QueryRecord,
    pub embedding_kind: LossKind,
    pub members: Vec<Member>,
}

impl Collection {
    pub fn signatures(&self) -> impl Iterator<Item = Signature> + '_ {
        self.members.iter().map(|m| m.signature)
    }
}

/// Lowercase ASCII alphanumerics, every other run collapsed to one hyphen,
/// hyphens trimmed from both ends.
pub fn slugify(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut gap = false;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            if gap && !out.is_empty() {
                out.push('-');
            }
            gap = false;
            out.push(c.to_ascii_lowercase());
        } else {
            gap = true;
        }
    }
    out
}

pub fn build_collection(
    topic: &QueryRecord,
    encoder: &EncoderBundle,
    index: &HnswIndex,
    k: usize,
) -> Result<Collection, CollectionError> {
    if index.is_empty() {
        return Err(CollectionError::EmptyIndex);
    }
    if k == 0 {
        return Err(CollectionError::ZeroK);
    }
    if encoder.output_dim() != index.dim() {
        return Err(CollectionError::DimMismatch {
            encoder: encoder.output_dim(),
            index: index.dim(),
        });
    }
    let probe = encoder.encode_topic(&topic.text)?;
    let ef = index.params().ef_search.max(k);
    let members = index
        .search(&probe, k, ef)?
        .into_iter()
        .map(|n| Member {
            signature: n.id,
            similarity: n.similarity,
        })
        .collect();
    Ok(Collection {
        slug: slugify(&topic.text),
        topic: topic.clone(),
        embedding_kind: encoder.kind(),
        members,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub pin_signature: Signature,
    pub satisfied: bool,
    pub score: f64,
}

pub trait Judge {
    fn judge(&self, pin: &PinRecord, topic: &QueryRecord) -> Result<JudgeVerdict, CollectionError>;
}

/// Cosine between the pin's text and the topic, both through the text
/// pathway of the encoder.
pub fn embedding_judge(
    pin: &PinRecord,
    topic: &QueryRecord,
    encoder: &EncoderBundle,
    threshold: f64,
) -> Result<JudgeVerdict, CollectionError> {
    let a = encoder.encode_text(&pin.text())?;
    let b = encoder.encode_text(&topic.text)?;
    let score = if a == b {
        1.0
    } else {
        cosine_slices(a.values(), b.values()).map_err(|_| EncoderError::ZeroNorm)?
    };
    Ok(JudgeVerdict {
        pin_signature: pin.signature,
        satisfied: score >= threshold,
        score,
    })
}

pub struct EmbeddingJudge<'a> {
    pub encoder: &'a EncoderBundle,
    pub threshold: f64,
}

impl<'a> EmbeddingJudge<'a> {
    pub fn new(encoder: &'a EncoderBundle) -> Self {
        Self {
            encoder,
            threshold: DEFAULT_JUDGE_THRESHOLD,
        }
    }
}

impl Judge for EmbeddingJudge<'_> {
    fn judge(&self, pin: &PinRecord, topic: &QueryRecord) -> Result<JudgeVerdict, CollectionError> {
        embedding_judge(pin, topic, self.encoder, self.threshold)
    }
}

/// Always returns the same decision.
pub struct ConstJudge(pub bool);

impl Judge for ConstJudge {
    fn judge(&self, pin: &PinRecord, _topic: &QueryRecord) -> Result<JudgeVerdict, CollectionError> {
        Ok(JudgeVerdict {
            pin_signature: pin.signature,
            satisfied: self.0,
            score: if self.0 { 1.0 } else { 0.0 },
        })
    }
}

/// One line of an externally produced verdict file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLine {
    pub topic: String,
    pub pin_signature: Signature,
    pub satisfied: bool,
    pub score: f64,
}

/// Replays verdicts written by an outside process (for example a language
/// model grader) as JSON lines keyed by topic text and pin.
#[derive(Debug, Clone, Default)]
pub struct FileJudge {
    verdicts: HashMap<(String, Signature), (bool, f64)>,
}

impl FileJudge {
    pub fn from_lines(lines: impl IntoIterator<Item = VerdictLine>) -> Self {
        Self {
            verdicts: lines
                .into_iter()
                .map(|l| ((l.topic, l.pin_signature), (l.satisfied, l.score)))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CollectionError> {
        Ok(Self::from_lines(read_jsonl::<VerdictLine>(path)?))
    }
}

impl Judge for FileJudge {
    fn judge(&self, pin: &PinRecord, topic: &QueryRecord) -> Result<JudgeVerdict, CollectionError> {
        let &(satisfied, score) = self
            .verdicts
            .get(&(topic.text.clone(), pin.signature))
            .ok_or_else(|| CollectionError::MissingVerdict {
                topic: topic.text.clone(),
                pin: pin.signature,
            })?;
        Ok(JudgeVerdict {
            pin_signature: pin.signature,
            satisfied,
            score,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentRate {
    pub rate: f64,
    pub verdicts: Vec<JudgeVerdict>,
}

/// Fraction of members the judge accepts.
pub fn intent_satisfying_rate(
    collection: &Collection,
    corpus: &Corpus,
    judge: &dyn Judge,
) -> Result<IntentRate, CollectionError> {
    if collection.members.is_empty() {
        return Err(CollectionError::NoMembers);
    }
    let mut verdicts = Vec::with_capacity(collection.members.len());
    for sig in collection.signatures() {
        let pin = corpus.pin(sig).ok_or(CollectionError::MissingMember(sig))?;
        let v = judge.judge(pin, &collection.topic)?;
        if !v.score.is_finite() {
            return Err(CollectionError::NonFiniteScore(sig));
        }
        verdicts.push(v);
    }
    let hits = verdicts.iter().filter(|v| v.satisfied).count();
    Ok(IntentRate {
        rate: hits as f64 / verdicts.len() as f64,
        verdicts,
    })
}

pub fn write_collections(path: &Path, collections: &[Collection]) -> Result<(), CollectionError> {
    Ok(write_jsonl(path, collections)?)
}

pub fn read_collections(path: &Path) -> Result<Vec<Collection>, CollectionError> {
    Ok(read_jsonl(path)?)
}

pub fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Static page for one collection. `tagged` lists pins whose annotations
/// point at this collection but that were not retrieved as members.
pub fn render_page(collection: &Collection, tagged: &[Signature]) -> String {
    let title = html_escape(&collection.topic.text);
    let mut s = String::new();
    let _ = writeln!(s, "<!DOCTYPE html>");
    let _ = writeln!(s, "<html lang=\"en\">");
    let _ = writeln!(s, "<head><meta charset=\"utf-8\"><title>{title}</title></head>");
    let _ = writeln!(s, "<body>");
    let _ = writeln!(s, "<h1>{title}</h1>");
    let _ = writeln!(s, "<ol class=\"members\">");
    for m in &collection.members {
        let _ = writeln!(s, "<li><a href=\"/pin/{0}\">{0}</a></li>", m.signature);
    }
    let _ = writeln!(s, "</ol>");
    let members: HashSet<Signature> = collection.signatures().collect();
    let extra: Vec<_> = tagged.iter().filter(|s| !members.contains(s)).collect();
    if !extra.is_empty() {
        let _ = writeln!(s, "<ul class=\"tagged\">");
        for sig in extra {
            let _ = writeln!(s, "<li><a href=\"/pin/{sig}\">{sig}</a></li>");
        }
        let _ = writeln!(s, "</ul>");
    }
    let _ = writeln!(s, "</body>");
    let _ = writeln!(s, "</html>");
    s
}

/// Writes `<slug>.html` for every collection into `dir`.
pub fn emit_pages(
    dir: &Path,
    collections: &[Collection],
    tagged: &HashMap<String, Vec<Signature>>,
) -> Result<(), CollectionError> {
    fs::create_dir_all(dir)?;
    for c in collections {
        let extra = tagged.get(&c.slug).map(Vec::as_slice).unwrap_or(&[]);
        fs::write(dir.join(format!("{}.html", c.slug)), render_page(c, extra))?;
    }
    Ok(())
}
