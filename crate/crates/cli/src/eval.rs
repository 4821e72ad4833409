//! Metric table, link-equity ablation and artifact checksums.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use geo_forge::collections::read_collections;
use geo_forge::model::records::Signature;
use geo_forge::ranker::Annotation;

use crate::config::LinkMode;
use crate::stage::*;
use crate::stages::{link_condition, read_json, write_json, Ctx, StageError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub stage: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub annotations: usize,
    pub resolved_annotations: usize,
    pub edges: usize,
    pub orphan_pins: usize,
    pub mean_collection_authority: f64,
    pub mean_pin_authority: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    /// Mean collection authority: enabled ≥ control ≥ ablation.
    pub authority_ordered: bool,
    /// Ablation leaves strictly more orphan pins than either other mode.
    pub orphans_highest_in_ablation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub metrics: Vec<MetricRow>,
    pub ablation: Ablation,
    /// Artifact path (relative to the output directory) to sha256 hex.
    pub checksums: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Files under `out` for the given artifact names; directories expand to
/// their files in name order.
pub fn artifact_files(out: &Path, artifacts: &[&str]) -> std::io::Result<Vec<String>> {
    let mut files = Vec::new();
    for a in artifacts {
        let p = out.join(a);
        if p.is_dir() {
            let mut names: Vec<String> = fs::read_dir(&p)?
                .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
                .collect::<Result<_, _>>()?;
            names.sort();
            files.extend(names.into_iter().map(|n| format!("{a}/{n}")));
        } else if p.is_file() {
            files.push(a.to_string());
        }
    }
    Ok(files)
}

pub fn checksums(out: &Path, artifacts: &[&str]) -> std::io::Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for rel in artifact_files(out, artifacts)? {
        let h = sha256_file(&out.join(&rel))?;
        m.insert(rel, h);
    }
    Ok(m)
}

/// Every artifact a full run leaves behind, except the report itself.
pub fn all_artifacts() -> Vec<&'static str> {
    let mut v: Vec<&str> = CORPUS_FILES.to_vec();
    for s in StageId::ALL.into_iter().filter(|&s| s != StageId::Eval) {
        v.extend_from_slice(s.outputs());
    }
    v
}

pub const CORPUS_FILES: [&str; 7] = [
    "corpus/manifest.txt",
    "corpus/pins.jsonl",
    "corpus/queries.jsonl",
    "corpus/engagement.jsonl",
    "corpus/labels.jsonl",
    "corpus/trends.jsonl",
    "corpus/taxonomy.json",
];

fn field(report: &serde_json::Value, artifact: &str, key: &str) -> Result<f64, StageError> {
    let v = report.pointer(key);
    let x = match v {
        Some(serde_json::Value::Bool(b)) => Some(if *b { 1.0 } else { 0.0 }),
        Some(v) => v.as_f64(),
        None => None,
    };
    x.ok_or_else(|| StageError::Failed(format!("{artifact} has no numeric `{key}`")))
}

const TABLE: [(&str, &str, &str, &str); 20] = [
    ("curate", CURATION_REPORT, "/branch_counts/high_impressions", "retained_high_impressions"),
    ("curate", CURATION_REPORT, "/branch_counts/high_ctr", "retained_high_ctr"),
    ("curate", CURATION_REPORT, "/branch_counts/top_position", "retained_top_position"),
    ("curate", CURATION_REPORT, "/branch_counts/rejected", "rejected"),
    ("curate", CURATION_REPORT, "/total_pairs", "labeled_pairs"),
    ("encode", ENCODER_REPORT, "/initial_loss", "initial_loss"),
    ("encode", ENCODER_REPORT, "/final_loss", "final_loss"),
    ("index", INDEX_REPORT, "/recall_at_10", "recall_at_10"),
    ("index", INDEX_REPORT, "/mean_distance_computations", "distance_computations"),
    ("rank", RANKER_REPORT, "/correct_rank", "correct_rank"),
    ("rank", RANKER_REPORT, "/untrained_correct_rank", "untrained_correct_rank"),
    ("collect", COLLECTIONS_REPORT, "/collections", "collections"),
    ("collect", COLLECTIONS_REPORT, "/mean_intent_rate", "intent_satisfying_rate"),
    ("link", LINK_REPORT, "/mean_collection_authority", "mean_collection_authority"),
    ("link", LINK_REPORT, "/mean_pin_authority", "mean_pin_authority"),
    ("link", LINK_REPORT, "/orphan_pins", "orphan_pins"),
    ("link", LINK_REPORT, "/iterations", "pagerank_iterations"),
    ("link", LINK_REPORT, "/converged", "pagerank_converged"),
    ("agent", AGENT_REPORT, "/kept", "trends_kept"),
    ("agent", AGENT_REPORT, "/emitted", "queries_emitted"),
];

pub fn ablation(
    pins: &[Signature],
    enabled: &[Annotation],
    control: &[Annotation],
    collections: &[geo_forge::collections::Collection],
    damping: f64,
) -> Result<Ablation, StageError> {
    let mut rows = Vec::new();
    for mode in LinkMode::ALL {
        let anns: &[Annotation] = match mode {
            LinkMode::Enabled => enabled,
            LinkMode::Control => control,
            LinkMode::Ablation => &[],
        };
        let l = link_condition(pins, anns, collections, damping)?;
        rows.push(AblationRow {
            mode: mode.as_str().into(),
            annotations: anns.len(),
            resolved_annotations: l.resolved,
            edges: l.report.edges,
            orphan_pins: l.report.orphan_pins,
            mean_collection_authority: l.report.mean_collection_authority,
            mean_pin_authority: l.report.mean_pin_authority,
        });
    }
    let a = |i: usize| rows[i].mean_collection_authority;
    let o = |i: usize| rows[i].orphan_pins;
    Ok(Ablation {
        authority_ordered: a(0) >= a(1) && a(1) >= a(2),
        orphans_highest_in_ablation: o(2) > o(0) && o(2) > o(1),
        rows,
    })
}

pub fn run_eval(ctx: &Ctx) -> Result<EvalReport, StageError> {
    for a in StageId::Eval.inputs() {
        ctx.require(a)?;
    }
    let mut reports: BTreeMap<&str, serde_json::Value> = BTreeMap::new();
    let mut metrics = Vec::new();
    for (stage, artifact, key, name) in TABLE {
        if !reports.contains_key(artifact) {
            reports.insert(artifact, read_json(&ctx.path(artifact))?);
        }
        metrics.push(MetricRow {
            stage: stage.into(),
            metric: name.into(),
            value: field(&reports[artifact], artifact, key)?,
        });
    }
    let corpus = ctx.corpus()?;
    let pins: Vec<Signature> = corpus.pins.iter().map(|p| p.signature).collect();
    let collections = read_collections(&ctx.path(COLLECTIONS)).map_err(|e| StageError::Failed(e.to_string()))?;
    let read = |a: &str| -> Result<Vec<Annotation>, StageError> {
        geo_forge::model::corpus::read_jsonl(&ctx.path(a)).map_err(|e| StageError::Failed(e.to_string()))
    };
    let ablation = ablation(&pins, &read(ANNOTATIONS)?, &read(ANNOTATIONS_CONTROL)?, &collections, ctx.cfg.link_damping)?;
    let checksums =
        checksums(&ctx.cfg.out, &all_artifacts()).map_err(|e| StageError::Failed(format!("checksums: {e}")))?;
    let report = EvalReport {
        seed: ctx.cfg.seed,
        metrics,
        ablation,
        checksums,
    };
    write_json(&ctx.path(REPORT), &report)?;
    Ok(report)
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e12 {
        format!("{v:.0}")
    } else if v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

pub fn render_table(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<9} {:<28} {:>12}", "stage", "metric", "value");
    for m in &r.metrics {
        let _ = writeln!(s, "{:<9} {:<28} {:>12}", m.stage, m.metric, fmt_value(m.value));
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<9} {:>9} {:>9} {:>7} {:>8} {:>12} {:>12}",
        "mode", "annots", "resolved", "edges", "orphans", "coll_auth", "pin_auth"
    );
    for a in &r.ablation.rows {
        let _ = writeln!(
            s,
            "{:<9} {:>9} {:>9} {:>7} {:>8} {:>12.4e} {:>12.4e}",
            a.mode,
            a.annotations,
            a.resolved_annotations,
            a.edges,
            a.orphan_pins,
            a.mean_collection_authority,
            a.mean_pin_authority
        );
    }
    let _ = writeln!(
        s,
        "authority enabled >= control >= ablation: {}; orphans highest in ablation: {}",
        r.ablation.authority_ordered, r.ablation.orphans_highest_in_ablation
    );
    s
}
