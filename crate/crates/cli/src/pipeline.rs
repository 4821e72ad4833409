use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::time::Instant;

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::eval::{checksums, render_table, run_eval, EvalReport, CORPUS_FILES};
use crate::stage::{StageId, CHECKSUMS};
use crate::stages::{self, read_json, write_json, Ctx, StageError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
    /// Not run because a stage it reads from failed.
    Halted,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRun {
    pub stage: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub generated_corpus: bool,
    pub stages: Vec<StageRun>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    pub eval: Option<EvalReport>,
}

impl PipelineReport {
    pub fn success(&self) -> bool {
        self.stages.iter().all(|s| s.status == Status::Ok)
    }

    pub fn run(&self, stage: StageId) -> Option<&StageRun> {
        self.stages.iter().find(|s| s.stage == stage.as_str())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.stages {
            let status = match r.status {
                Status::Ok => "ok",
                Status::Failed => "FAILED",
                Status::Halted => "halted",
            };
            s.push_str(&format!("{:<9} {:<7} {:>7.2}s", r.stage, status, r.seconds));
            if let Some(e) = &r.error {
                s.push_str(&format!("  {e}"));
            }
            s.push('\n');
        }
        if let Some(e) = &self.eval {
            s.push('\n');
            s.push_str(&render_table(e));
        }
        s
    }
}

fn record_checksums(cfg: &PipelineConfig, artifacts: &[&str]) -> Result<(), StageError> {
    let path = cfg.out.join(CHECKSUMS);
    let mut all: BTreeMap<String, String> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
    let fresh = checksums(&cfg.out, artifacts).map_err(|e| StageError::Failed(format!("checksums: {e}")))?;
    all.extend(fresh);
    write_json(&path, &all)
}

fn run_one(ctx: &Ctx, stage: StageId) -> Result<(serde_json::Value, Option<EvalReport>), StageError> {
    for a in stage.inputs() {
        ctx.require(a)?;
    }
    let v = match stage {
        StageId::Curate => stages::run_curate(ctx)?,
        StageId::Encode => stages::run_encode(ctx)?,
        StageId::Index => stages::run_index(ctx)?,
        StageId::Rank => stages::run_rank(ctx)?,
        StageId::Collect => stages::run_collect(ctx)?,
        StageId::Link => stages::run_link(ctx)?,
        StageId::Agent => stages::run_agent(ctx)?,
        StageId::Eval => {
            let r = run_eval(ctx)?;
            let v = serde_json::to_value(&r.ablation).map_err(|e| StageError::Failed(e.to_string()))?;
            return Ok((v, Some(r)));
        }
    };
    Ok((v, None))
}

/// Runs the configured stages in dependency order. A failed stage halts the
/// stages that read its outputs; the rest still run. With `generate` set and
/// no manifest configured, a synthetic corpus is written first when none
/// exists yet.
pub fn run_stages(cfg: &PipelineConfig, generate: bool) -> Result<PipelineReport, StageError> {
    fs::create_dir_all(&cfg.out).map_err(|e| StageError::Failed(format!("{}: {e}", cfg.out.display())))?;
    let mut generated = false;
    if generate && cfg.manifest.is_none() && !cfg.manifest_path().exists() {
        log::info!("generating corpus under {}", cfg.out.join("corpus").display());
        stages::gen_corpus(cfg)?;
        record_checksums(cfg, &CORPUS_FILES)?;
        generated = true;
    }
    let ctx = Ctx { cfg };
    let mut order = cfg.stages.clone();
    order.sort();
    order.dedup();
    let mut failed: BTreeSet<StageId> = BTreeSet::new();
    let mut report = PipelineReport {
        generated_corpus: generated,
        stages: Vec::new(),
        metrics: BTreeMap::new(),
        eval: None,
    };
    for stage in order {
        let t = Instant::now();
        if let Some(up) = stage.upstream().into_iter().find(|u| failed.contains(u)) {
            failed.insert(stage);
            report.stages.push(StageRun {
                stage: stage.as_str().into(),
                status: Status::Halted,
                error: Some(format!("upstream stage {up} failed")),
                seconds: 0.0,
            });
            continue;
        }
        log::info!("stage {stage}");
        let outcome = run_one(&ctx, stage).and_then(|r| {
            record_checksums(cfg, stage.outputs())?;
            Ok(r)
        });
        let seconds = t.elapsed().as_secs_f64();
        match outcome {
            Ok((v, eval)) => {
                report.metrics.insert(stage.as_str().into(), v);
                if eval.is_some() {
                    report.eval = eval;
                }
                report.stages.push(StageRun {
                    stage: stage.as_str().into(),
                    status: Status::Ok,
                    error: None,
                    seconds,
                });
            }
            Err(e) => {
                log::debug!("stage {stage}: {e}");
                failed.insert(stage);
                report.stages.push(StageRun {
                    stage: stage.as_str().into(),
                    status: Status::Failed,
                    error: Some(format!("{stage}: {e}")),
                    seconds,
                });
            }
        }
    }
    Ok(report)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, StageError> {
    run_stages(cfg, true)
}

/// Worker pool capped by `GEO_FORGE_THREADS` when set.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T, String> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("GEO_FORGE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| format!("GEO_FORGE_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            return Err("GEO_FORGE_THREADS must be positive".into());
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| e.to_string())?;
    Ok(pool.install(f))
}
