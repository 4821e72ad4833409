use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geo_forge_cli::config::parse_stages;
use geo_forge_cli::pipeline::with_pool;
use geo_forge_cli::{run_stages, LinkMode, PipelineConfig, StageId};

#[derive(Parser, Debug)]
#[command(name = "geo-forge", version, about = "Query curation, retrieval, collection pages and link graphs over a pin corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed; every stage derives its own seed from it
    #[arg(long)]
    seed: Option<u64>,
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corpus manifest (defaults to <out>/corpus/manifest.txt)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Extra key=value setting, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a clustered synthetic corpus to <out>/corpus
    GenCorpus {
        #[command(flatten)]
        common: Common,
        /// Number of pins
        #[arg(long)]
        pins: Option<usize>,
        /// Number of topical clusters
        #[arg(long)]
        clusters: Option<usize>,
    },
    /// Filter engagement, label and stratify query-pin pairs
    Curate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the contrastive pin encoder
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        /// pinclip or searchsage
        #[arg(long)]
        kind: Option<String>,
        /// SGD steps
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Encode every pin and build the HNSW index
    BuildIndex {
        #[command(flatten)]
        common: Common,
        /// Search beam width
        #[arg(long)]
        ef_search: Option<usize>,
    },
    /// Train the two-tower ranker and annotate pins with queries
    TrainRanker {
        #[command(flatten)]
        common: Common,
        /// Training epochs
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Build topic collections and score them with the embedding judge
    BuildCollections {
        #[command(flatten)]
        common: Common,
        /// Members per collection
        #[arg(long)]
        k: Option<usize>,
    },
    /// Build the link graph, authority scores, pages and sitemap
    Link {
        #[command(flatten)]
        common: Common,
        /// enabled, control or ablation
        #[arg(long)]
        mode: Option<LinkModeArg>,
        /// Base URL for sitemap locations
        #[arg(long)]
        base_url: Option<String>,
    },
    /// Run one trend-mining agent episode
    AgentRun {
        #[command(flatten)]
        common: Common,
        /// Long-memory file from an earlier episode
        #[arg(long)]
        memory: Option<PathBuf>,
    },
    /// Collect stage metrics, run the link ablation and write report.json
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Run stages end to end, generating a corpus if none is configured
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of curate,encode,index,rank,collect,link,agent,eval
        #[arg(long)]
        stages: Option<String>,
    },
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum LinkModeArg {
    Enabled,
    Control,
    Ablation,
}

impl From<LinkModeArg> for LinkMode {
    fn from(m: LinkModeArg) -> Self {
        match m {
            LinkModeArg::Enabled => LinkMode::Enabled,
            LinkModeArg::Control => LinkMode::Control,
            LinkModeArg::Ablation => LinkMode::Ablation,
        }
    }
}

fn base_config(c: &Common) -> Result<PipelineConfig, String> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| e.to_string())?,
        None => PipelineConfig::default(),
    };
    for kv in &c.set {
        cfg.apply_override(kv).map_err(|e| e.to_string())?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(m) = &c.manifest {
        cfg.manifest = Some(m.clone());
    }
    Ok(cfg)
}

enum Plan {
    Generate,
    Stages { generate: bool, print_table: bool },
}

fn plan(cmd: Command) -> Result<(PipelineConfig, Plan), String> {
    let single = |common: &Common, s: StageId| -> Result<PipelineConfig, String> {
        let mut cfg = base_config(common)?;
        cfg.stages = vec![s];
        Ok(cfg)
    };
    let stage_plan = Plan::Stages {
        generate: false,
        print_table: false,
    };
    Ok(match cmd {
        Command::GenCorpus { common, pins, clusters } => {
            let mut cfg = base_config(&common)?;
            if let Some(p) = pins {
                cfg.synth_pins = p;
            }
            if let Some(c) = clusters {
                cfg.synth_clusters = c;
            }
            (cfg, Plan::Generate)
        }
        Command::Curate { common } => (single(&common, StageId::Curate)?, stage_plan),
        Command::TrainEncoder { common, kind, steps } => {
            let mut cfg = single(&common, StageId::Encode)?;
            if let Some(k) = kind {
                cfg.apply_override(&format!("encoder.kind={k}")).map_err(|e| e.to_string())?;
            }
            if let Some(s) = steps {
                cfg.encoder_steps = s;
            }
            (cfg, stage_plan)
        }
        Command::BuildIndex { common, ef_search } => {
            let mut cfg = single(&common, StageId::Index)?;
            if let Some(ef) = ef_search {
                cfg.index_ef_search = ef;
            }
            (cfg, stage_plan)
        }
        Command::TrainRanker { common, epochs } => {
            let mut cfg = single(&common, StageId::Rank)?;
            if let Some(e) = epochs {
                cfg.ranker_epochs = e;
            }
            (cfg, stage_plan)
        }
        Command::BuildCollections { common, k } => {
            let mut cfg = single(&common, StageId::Collect)?;
            if let Some(k) = k {
                cfg.collections_k = k;
            }
            (cfg, stage_plan)
        }
        Command::Link { common, mode, base_url } => {
            let mut cfg = single(&common, StageId::Link)?;
            if let Some(m) = mode {
                cfg.link_mode = m.into();
            }
            if let Some(u) = base_url {
                cfg.link_base_url = u;
            }
            (cfg, stage_plan)
        }
        Command::AgentRun { common, memory } => {
            let mut cfg = single(&common, StageId::Agent)?;
            if memory.is_some() {
                cfg.agent_memory = memory;
            }
            (cfg, stage_plan)
        }
        Command::Eval { common } => (
            single(&common, StageId::Eval)?,
            Plan::Stages {
                generate: false,
                print_table: true,
            },
        ),
        Command::Pipeline { common, stages } => {
            let mut cfg = base_config(&common)?;
            if let Some(s) = stages {
                cfg.stages = parse_stages(&s)?;
            }
            (
                cfg,
                Plan::Stages {
                    generate: true,
                    print_table: true,
                },
            )
        }
    })
}

fn execute(cfg: PipelineConfig, plan: Plan) -> Result<bool, String> {
    match plan {
        Plan::Generate => {
            let v = geo_forge_cli::stages::gen_corpus(&cfg).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&v).map_err(|e| e.to_string())?);
            Ok(true)
        }
        Plan::Stages { generate, print_table } => {
            let report = run_stages(&cfg, generate).map_err(|e| e.to_string())?;
            if print_table {
                print!("{}", report.summary());
            } else {
                for r in &report.stages {
                    if let Some(e) = &r.error {
                        eprintln!("error: {e}");
                    }
                }
                for v in report.metrics.values() {
                    println!("{}", serde_json::to_string_pretty(v).map_err(|e| e.to_string())?);
                }
            }
            Ok(report.success())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = plan(cli.command).and_then(|(cfg, plan)| with_pool(move || execute(cfg, plan))?);
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
