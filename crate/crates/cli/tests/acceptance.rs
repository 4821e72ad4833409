//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each, and exits nonzero if any failed.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use geo_forge::agent::{
    self, Action, AgentConfig, FileTrendFeed, Observation, RuleTools, Taxonomy, ToolSuite, DEFAULT_BLOCKED,
};
use geo_forge::ann::{brute_force_search, build, HnswIndex, HnswParams};
use geo_forge::collections::{build_collection, read_collections, intent_satisfying_rate, EmbeddingJudge};
use geo_forge::curation::{retain_signals, stratify_sample, CategoryMix, RetentionSignals};
use geo_forge::encoders::{
    softmax_contrastive, softmax_contrastive_loss, ContrastiveBatch, EncoderBundle, PinClipInputs, PinClipModel,
    SearchSageInputs, SearchSageModel, TaskType,
};
use geo_forge::linkgraph::{pagerank, EdgeLine, LinkGraph, PageId, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE};
use geo_forge::model::corpus::read_jsonl;
use geo_forge::model::records::{Label, LabeledPair, PairSource, QueryCategory, QueryRecord};
use geo_forge::model::seed::{rng, sub_seed, Stage};
use geo_forge::model::vector::normalize_slice;
use geo_forge::model::{load_corpus, CorpusManifest, DenseVector};
use geo_forge::ranker::{
    correct_rank, margin_loss, separable_triplets, train_ranker, Mode, RankerModel, RankerTrainConfig, RankerTriplet,
    TowerConfig,
};
use geo_forge::synth::{generate, held_out_topics, SynthConfig};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn timed(f: impl FnOnce() -> Verdict) -> (Verdict, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

// ---------------------------------------------------------------- 1

/// Written from the rule text alone: keep when impressions exceed 1000, or
/// when impressions exceed 10 and either CTR is at least 0.8 or average
/// position is at most 10.
fn retention_oracle(impressions: u64, ctr: f64, position: f64) -> bool {
    let many = impressions > 1000;
    let some = impressions > 10;
    let clicky = ctr >= 0.8;
    let high = position <= 10.0;
    many || (some && clicky) || (some && high)
}

fn filter_truth_table() -> Verdict {
    let t = Instant::now();
    let mut cells = 0;
    let mut wrong = Vec::new();
    for imp in [0u64, 5, 10, 11, 50, 1000, 1001] {
        for ctr in [0.0, 0.5, 0.79, 0.8, 1.0] {
            for pos in [1.0, 10.0, 10.5, 50.0] {
                cells += 1;
                let got = retain_signals(RetentionSignals {
                    impressions: imp,
                    ctr: (imp > 0).then_some(ctr),
                    avg_position: pos,
                });
                if got != retention_oracle(imp, ctr, pos) {
                    wrong.push((imp, ctr, pos));
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        wrong.is_empty() && cells == 140 && secs < 1.0,
        format!("{cells} cells, {} mismatches {wrong:?}, {secs:.4}s", wrong.len()),
    )
}

// ---------------------------------------------------------------- 2

fn unit_rows<R: Rng>(b: usize, d: usize, r: &mut R) -> Array2<f64> {
    let mut m: Array2<f64> = Array2::from_shape_fn((b, d), |_| StandardNormal.sample(r));
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    m
}

fn gauss<R: Rng>(b: usize, d: usize, r: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((b, d), |_| StandardNormal.sample(r))
}

fn single_softmax_error(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut r = rng(seed);
        let (b, d) = (r.random_range(2..=8), r.random_range(2..=16));
        let tau = r.random_range(0.05..1.0);
        let x = unit_rows(b, d, &mut r);
        let y = unit_rows(b, d, &mut r);
        let g = softmax_contrastive_loss(&ContrastiveBatch::new(x.clone(), y.clone(), tau).unwrap()).unwrap();
        let loss = |x: &Array2<f64>, y: &Array2<f64>| softmax_contrastive(x.view(), y.view(), tau).unwrap().loss;
        for i in 0..b {
            for j in 0..d {
                let fx = gradcheck::central(
                    |v| {
                        let mut p = x.clone();
                        p[[i, j]] = v;
                        loss(&p, &y)
                    },
                    x[[i, j]],
                    gradcheck::STEP,
                );
                let fy = gradcheck::central(
                    |v| {
                        let mut p = y.clone();
                        p[[i, j]] = v;
                        loss(&x, &p)
                    },
                    y[[i, j]],
                    gradcheck::STEP,
                );
                worst = worst.max(gradcheck::rel_err(g.d_anchors[[i, j]], fx));
                worst = worst.max(gradcheck::rel_err(g.d_positives[[i, j]], fy));
            }
        }
    }
    worst
}

fn pinclip_outcome(seeds: u64) -> gradcheck::Outcome {
    let mut total = gradcheck::Outcome::default();
    for seed in 0..seeds {
        let mut r = rng(1000 + seed);
        let (dv, dt, d) = (r.random_range(3..=10), r.random_range(3..=10), r.random_range(3..=8));
        let model = PinClipModel::init(dv, dt, &[16], d, &mut r);
        let b = r.random_range(2..=6);
        let inputs = PinClipInputs {
            image: gauss(b, dv, &mut r),
            text: gauss(b, dt, &mut r),
            left_image: gauss(b, dv, &mut r),
            left_text: gauss(b, dt, &mut r),
            right_image: gauss(b, dv, &mut r),
            right_text: gauss(b, dt, &mut r),
        };
        let tau = r.random_range(0.1..1.0);
        let (_, grad) = model.objective(&inputs, tau).unwrap();
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
        let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
        total = total.merge(gradcheck::check_params(
            &model,
            &analytic,
            PinClipModel::tensors_mut,
            |m| m.objective_loss(&inputs, tau).unwrap(),
            &gradcheck::coords(&sizes, 400),
            1e-3,
        ));
    }
    total
}

fn searchsage_outcome(seeds: u64) -> gradcheck::Outcome {
    let mut total = gradcheck::Outcome::default();
    for seed in 0..seeds {
        let mut r = rng(2000 + seed);
        let (dv, dt, d) = (r.random_range(3..=8), r.random_range(3..=8), r.random_range(3..=8));
        let model = SearchSageModel::init(dv, dt, &[16], d, &mut r);
        let mut inputs: SearchSageInputs = BTreeMap::new();
        for task in [TaskType::QueryPin, TaskType::QueryBoard] {
            let b = r.random_range(2..=6);
            inputs.insert(task, (gauss(b, dt, &mut r), gauss(b, dv + dt, &mut r)));
        }
        let tau = r.random_range(0.1..1.0);
        let (_, grad) = model.objective(&inputs, tau).unwrap();
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
        let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
        total = total.merge(gradcheck::check_params(
            &model,
            &analytic,
            SearchSageModel::tensors_mut,
            |m| m.objective_loss(&inputs, tau).unwrap(),
            &gradcheck::coords(&sizes, 400),
            1e-3,
        ));
    }
    total
}

/// Probes are re-drawn while a ReLU or hinge kink sits within 1e-6.
fn ranker_outcome(seeds: u64) -> gradcheck::Outcome {
    let cfg = TowerConfig {
        hidden: vec![16, 12, 10],
        output: 4,
        dropout: 0.1,
        ..TowerConfig::new(6, 5)
    };
    let mut total = gradcheck::Outcome::default();
    for seed in 0..seeds {
        let model = RankerModel::init(cfg.clone(), seed).unwrap();
        let mut attempt = 0u64;
        let (probe, ds) = loop {
            let data = separable_triplets(6, 5, 3, 2, 0, seed * 100 + attempt);
            let ds = seed + 77 + attempt;
            let refs: Vec<&RankerTriplet> = data.train.iter().collect();
            let (bl, _) = model.objective(&refs, Mode::Train, ds).unwrap();
            if bl.kink_distance > 1e-6 && bl.loss > 0.0 {
                break (data.train, ds);
            }
            attempt += 1;
        };
        let refs: Vec<&RankerTriplet> = probe.iter().collect();
        let (_, grad) = model.objective(&refs, Mode::Train, ds).unwrap();
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
        let sizes: Vec<usize> = analytic.iter().map(Vec::len).collect();
        total = total.merge(gradcheck::check_params(
            &model,
            &analytic,
            RankerModel::tensors_mut,
            |m| m.objective_loss(&refs, Mode::Train, ds).unwrap(),
            &gradcheck::coords(&sizes, usize::MAX),
            1e-3,
        ));
    }
    total
}

fn gradient_fidelity() -> Verdict {
    let t = Instant::now();
    let seeds = 20;
    let single = single_softmax_error(seeds);
    let pc = pinclip_outcome(seeds);
    let ss = searchsage_outcome(seeds);
    let rk = ranker_outcome(seeds);
    let secs = t.elapsed().as_secs_f64();
    let smooth = |o: &gradcheck::Outcome| o.skipped * 20 < o.checked;
    let pass = single < 1e-4
        && pc.max_rel < 1e-4
        && ss.max_rel < 1e-4
        && rk.max_rel < 1e-3
        && smooth(&pc)
        && smooth(&ss)
        && smooth(&rk)
        && secs < 30.0;
    verdict(
        pass,
        format!(
            "{seeds} seeds; max rel err softmax {single:.2e}, pinclip {:.2e} ({} coords), searchsage {:.2e} ({} coords), ranker {:.2e} ({} coords, {} kink skips); {secs:.1}s",
            pc.max_rel, pc.checked, ss.max_rel, ss.checked, rk.max_rel, rk.checked, rk.skipped
        ),
    )
}

// ---------------------------------------------------------------- 3

fn uniform_logit_identity() -> Verdict {
    let mut worst = 0.0f64;
    let mut r = rng(3);
    for b in [2usize, 4, 8, 128] {
        let d = 16;
        let row = unit_rows(1, d, &mut r);
        let x = Array2::from_shape_fn((b, d), |(_, j)| row[[0, j]]);
        let l = softmax_contrastive_loss(&ContrastiveBatch::new(x.clone(), x, 0.07).unwrap())
            .unwrap()
            .loss;
        worst = worst.max((l - (b as f64).ln()).abs());
    }
    verdict(worst <= 1e-12, format!("max |loss - ln B| = {worst:.2e} over B in {{2,4,8,128}}"))
}

// ---------------------------------------------------------------- 4 and 5

fn random_unit<R: Rng>(d: usize, r: &mut R) -> DenseVector {
    let v: Vec<f32> = (0..d).map(|_| StandardNormal.sample(r)).collect();
    DenseVector::new(normalize_slice(&v).unwrap())
}

fn dataset(n: usize, seed: u64) -> Vec<(u64, DenseVector)> {
    let mut r = rng(seed);
    (0..n as u64).map(|i| (i, random_unit(64, &mut r))).collect()
}

fn probes(seed: u64) -> Vec<DenseVector> {
    let mut r = rng(seed);
    (0..100).map(|_| random_unit(64, &mut r)).collect()
}

fn recall_at(idx: &HnswIndex, truth: &[HashSet<u64>], queries: &[DenseVector], ef: usize) -> f64 {
    let mut hit = 0;
    for (q, t) in queries.iter().zip(truth) {
        hit += idx.search(q, 10, ef).unwrap().iter().filter(|n| t.contains(&n.id)).count();
    }
    hit as f64 / (10 * queries.len()) as f64
}

fn hnsw_recall() -> Verdict {
    let t = Instant::now();
    let items = dataset(10_000, 31);
    let idx = build(items.clone(), HnswParams::default(), 5).unwrap();
    let queries = probes(32);
    let truth: Vec<HashSet<u64>> = queries
        .iter()
        .map(|q| brute_force_search(&items, q, 10).unwrap().iter().map(|n| n.id).collect())
        .collect();
    let default_recall = recall_at(&idx, &truth, &queries, HnswParams::default().ef_search);
    let sweep: Vec<f64> = [10, 50, 100, 500].iter().map(|&ef| recall_at(&idx, &truth, &queries, ef)).collect();
    let secs = t.elapsed().as_secs_f64();
    let monotone = sweep.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        default_recall >= 0.95 && monotone && secs < 60.0,
        format!("recall@10 {default_recall:.3} at defaults; ef 10/50/100/500 -> {sweep:.3?}; {secs:.1}s"),
    )
}

fn mean_distance_computations(n: usize) -> f64 {
    let items = dataset(n, 60 + n as u64);
    let idx = build(items, HnswParams::default(), 6).unwrap();
    let queries = probes(61);
    let total: usize = queries
        .iter()
        .map(|q| idx.search_with_stats(q, 10, 100).unwrap().1.distance_computations)
        .sum();
    total as f64 / queries.len() as f64
}

fn hnsw_sublinear() -> Verdict {
    let small = mean_distance_computations(1_000);
    let large = mean_distance_computations(10_000);
    let ratio = large / small;
    verdict(
        ratio < 3.0,
        format!("distance computations/query: 1k {small:.0}, 10k {large:.0}, ratio {ratio:.2}"),
    )
}

// ---------------------------------------------------------------- 6

fn margin_hinge() -> Verdict {
    let m = 0.95;
    let mut r = rng(6);
    let mut counter = 0;
    let mut zero = 0;
    for _ in 0..10_000 {
        let d = r.random_range(2..=16);
        let unit = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        };
        let (p, a, b) = (unit(&mut r), unit(&mut r), unit(&mut r));
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
        let sep = dot(&p, &a) - dot(&p, &b);
        let l = margin_loss(&p, &a, &b, m);
        if (l == 0.0) != (sep >= m) || l < 0.0 {
            counter += 1;
        }
        zero += usize::from(l == 0.0);
    }
    verdict(
        counter == 0 && zero > 0,
        format!("10000 triplets, {counter} counterexamples, {zero} at zero loss"),
    )
}

// ---------------------------------------------------------------- 7

fn ranker_correct_rank() -> Verdict {
    let t = Instant::now();
    let data = separable_triplets(1028, 768, 16, 4000, 2000, 7);
    let cfg = TowerConfig::new(1028, 768).with_width_multiplier(0.125);
    let tc = RankerTrainConfig::default();
    let untrained = correct_rank(&RankerModel::init(cfg.clone(), tc.seed).unwrap(), &data.eval).unwrap();
    let trained = train_ranker(&data.train, cfg, &tc).unwrap();
    let cr = correct_rank(&trained.model, &data.eval).unwrap();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        data.eval.len() >= 2000 && cr >= 0.97 && (0.4..=0.6).contains(&untrained) && secs < 120.0,
        format!(
            "{} eval triplets; trained {cr:.4}, untrained {untrained:.4}; {secs:.1}s",
            data.eval.len()
        ),
    )
}

// ---------------------------------------------------------------- 8

fn stratified_sampling() -> Verdict {
    let mut pairs = Vec::new();
    for (c, cat) in QueryCategory::ALL.into_iter().enumerate() {
        for i in 0..6000u64 {
            pairs.push(LabeledPair {
                pin_signature: c as u64 * 100_000 + i,
                query: QueryRecord::new(&format!("q{c} {i}"), cat, "en-US").unwrap(),
                label: Label::Positive,
                navboost_coverage: 0.0,
                source: PairSource::SearchConsole,
            });
        }
    }
    let total = 10_000;
    let s = stratify_sample(&pairs, &CategoryMix::default(), total, 8).unwrap();
    let mut got = [0usize; 3];
    for p in &s.pairs {
        got[p.query.category.index()] += 1;
    }
    // rounding-exact targets for 30/30/40 of 10k
    let want = [3000usize, 3000, 4000];
    let ok = s.pairs.len() == total && got.iter().zip(want).all(|(&g, w)| g.abs_diff(w) <= 1);
    verdict(ok, format!("drew {got:?} of {total}, target {want:?}"))
}

// ---------------------------------------------------------------- 9

fn dense_oracle(n: usize, edges: &[(usize, usize)], d: f64) -> Vec<f64> {
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in edges {
        adj[a][b] = true;
    }
    let mut g = vec![vec![0.0f64; n]; n];
    for (u, row) in adj.iter().enumerate() {
        let deg = row.iter().filter(|&&x| x).count();
        for v in 0..n {
            let follow = if deg == 0 {
                1.0 / n as f64
            } else if row[v] {
                1.0 / deg as f64
            } else {
                0.0
            };
            g[v][u] = d * follow + (1.0 - d) / n as f64;
        }
    }
    let mut r = vec![1.0 / n as f64; n];
    for _ in 0..2000 {
        r = (0..n).map(|v| (0..n).map(|u| g[v][u] * r[u]).sum()).collect();
    }
    r
}

fn graph_of(n: usize, edges: &[(usize, usize)]) -> LinkGraph {
    let mut g = LinkGraph::new();
    for i in 0..n {
        g.add_node(PageId::Pin(i as u64));
    }
    for &(a, b) in edges {
        g.add_edge(PageId::Pin(a as u64), PageId::Pin(b as u64)).unwrap();
    }
    g
}

fn pagerank_checks() -> Verdict {
    let d = 0.85;
    let ring = pagerank(&graph_of(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]), d, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
    let ring_err = ring.scores.iter().map(|s| (s - 0.25).abs()).fold(0.0, f64::max);
    let mut r = rng(9);
    let (mut mass_err, mut oracle_err) = (0.0f64, 0.0f64);
    let graphs = 300;
    for _ in 0..graphs {
        let n = r.random_range(1..=8);
        let m = r.random_range(0..=n * n);
        let edges: Vec<(usize, usize)> = (0..m)
            .map(|_| (r.random_range(0..n), r.random_range(0..n)))
            .filter(|(a, b)| a != b)
            .collect();
        let s = pagerank(&graph_of(n, &edges), d, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
        mass_err = mass_err.max((s.total() - 1.0).abs());
        let want = dense_oracle(n, &edges, d);
        for (i, w) in want.iter().enumerate() {
            oracle_err = oracle_err.max((s.get(&PageId::Pin(i as u64)).unwrap() - w).abs());
        }
    }
    verdict(
        ring_err <= 1e-9 && mass_err <= 1e-9 && oracle_err <= 1e-9,
        format!("4-ring err {ring_err:.1e}; {graphs} digraphs: mass err {mass_err:.1e}, oracle err {oracle_err:.1e}"),
    )
}

// ---------------------------------------------------------------- pipeline runs

struct Run {
    dir: PathBuf,
    ok: bool,
    secs: f64,
    stdout: String,
}

fn run_pipeline(dir: &Path) -> Run {
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_geo-forge"))
        .args(["pipeline", "--seed", "42", "--out"])
        .arg(dir)
        .output()
        .expect("binary runs");
    Run {
        dir: dir.to_path_buf(),
        ok: out.status.success(),
        secs: t.elapsed().as_secs_f64(),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
    }
}

fn report(run: &Run) -> Option<serde_json::Value> {
    let text = std::fs::read_to_string(run.dir.join("report.json")).ok()?;
    serde_json::from_str(&text).ok()
}

// ---------------------------------------------------------------- 10

fn link_ablation(run: &Run) -> Verdict {
    let Some(r) = report(run) else {
        return verdict(false, "no report.json");
    };
    let rows = r["ablation"]["rows"].as_array().cloned().unwrap_or_default();
    if rows.len() != 3 {
        return verdict(false, format!("expected 3 ablation rows, got {}", rows.len()));
    }
    let auth: Vec<f64> = rows.iter().map(|x| x["mean_collection_authority"].as_f64().unwrap_or(f64::NAN)).collect();
    let orphans: Vec<u64> = rows.iter().map(|x| x["orphan_pins"].as_u64().unwrap_or(0)).collect();
    let modes: Vec<&str> = rows.iter().map(|x| x["mode"].as_str().unwrap_or("")).collect();
    let ordered = auth[0] >= auth[1] && auth[1] >= auth[2];
    let orphan_max = orphans[2] > orphans[0] && orphans[2] > orphans[1];
    verdict(
        modes == ["enabled", "control", "ablation"] && ordered && orphan_max,
        format!(
            "collection authority enabled {:.4e} / control {:.4e} / ablation {:.4e}; orphans {} / {} / {}",
            auth[0], auth[1], auth[2], orphans[0], orphans[1], orphans[2]
        ),
    )
}

// ---------------------------------------------------------------- 11

fn intent_rates(run: &Run) -> Verdict {
    let config = SynthConfig::default();
    let synth = generate(&config);
    let manifest = CorpusManifest::load(&run.dir.join("corpus/manifest.txt")).unwrap();
    let corpus = load_corpus(&manifest).unwrap();
    if corpus.pins != synth.corpus.pins {
        return verdict(false, "pipeline corpus differs from the default synthetic corpus");
    }
    let encoder = EncoderBundle::load(&run.dir.join("encoder.ckpt")).unwrap();
    let index = HnswIndex::load(&run.dir.join("index.hnsw")).unwrap();
    let judge = EmbeddingJudge::new(&encoder);
    let mean_rate = |topics: &[String]| -> f64 {
        let rates: Vec<f64> = topics
            .iter()
            .map(|t| {
                let q = QueryRecord::new(t, QueryCategory::Description, "en-US").unwrap();
                let c = build_collection(&q, &encoder, &index, 10).unwrap();
                intent_satisfying_rate(&c, &corpus, &judge).unwrap().rate
            })
            .collect();
        rates.iter().sum::<f64>() / rates.len() as f64
    };
    let inside: Vec<String> = synth.clusters.iter().map(|c| c.topic.clone()).collect();
    let outside = held_out_topics(&config, 10);
    let (a, b) = (mean_rate(&inside), mean_rate(&outside));
    verdict(
        a >= 0.85 && b <= 0.3,
        format!(
            "k=10: {} in-cluster topics {a:.3}, {} off-cluster topics {b:.3}",
            inside.len(),
            outside.len()
        ),
    )
}

// ---------------------------------------------------------------- 12

fn agent_checks(a: &Run, b: &Run) -> Verdict {
    let bytes = |r: &Run| std::fs::read(r.dir.join("agent_trace.jsonl")).unwrap_or_default();
    let identical = !bytes(a).is_empty() && bytes(a) == bytes(b);

    let manifest = CorpusManifest::load(&a.dir.join("corpus/manifest.txt")).unwrap();
    let corpus = load_corpus(&manifest).unwrap();
    let encoder = EncoderBundle::load(&a.dir.join("encoder.ckpt")).unwrap();
    let index = HnswIndex::load(&a.dir.join("index.hnsw")).unwrap();
    let feed = FileTrendFeed::load(manifest.trends.as_ref().unwrap()).unwrap();
    let taxonomy: Taxonomy =
        serde_json::from_str(&std::fs::read_to_string(manifest.taxonomy.as_ref().unwrap()).unwrap()).unwrap();
    let tools = RuleTools::new(feed.clone(), taxonomy, corpus.dims.text, sub_seed(42, Stage::Agent))
        .with_index(&index, &encoder, &corpus);
    let config = AgentConfig::default();
    let ep = agent::run_episode(&config, &tools, agent::LongMemory::new()).unwrap();
    let same_as_file = agent::trace_bytes(&ep.trace) == bytes(a);
    let replayed = agent::replay(agent::LongMemory::new(), &ep.trace).map(|s| s == ep.state).unwrap_or(false);

    // blocked trends never reach expansion
    let category: BTreeMap<&str, &str> =
        ep.state.trends.iter().map(|t| (t.term.as_str(), t.category.as_str())).collect();
    let blocked_expanded = ep
        .trace
        .iter()
        .filter(|e| match &e.action {
            Action::ExpandQuery { term } => DEFAULT_BLOCKED.contains(&category[term.as_str()]),
            _ => false,
        })
        .count();
    let blocked_seen = ep.state.trends.iter().filter(|t| DEFAULT_BLOCKED.contains(&t.category.as_str())).count();

    // every emitted query re-checked against the feed and the tools
    let emitted: Vec<QueryRecord> = read_jsonl(&a.dir.join("trend_queries.jsonl")).unwrap();
    let mut violations = 0;
    for q in &emitted {
        let term = ep.trace.iter().find_map(|e| match &e.action {
            Action::ContentLookup { term, query } if query == &q.text => Some(term.clone()),
            _ => None,
        });
        let Some(term) = term else {
            violations += 1;
            continue;
        };
        let trend = ep.state.trend(&term).unwrap();
        let relevant = tools.semantic_filter(trend, config.filter_threshold).map(|r| r.keep).unwrap_or(false)
            && !DEFAULT_BLOCKED.contains(&trend.category.as_str());
        let current = trend.velocity >= config.velocity_floor;
        let available = tools.content_lookup(q, config.min_count).map(|r| r.count > config.min_count).unwrap_or(false);
        if !(relevant && current && available) {
            violations += 1;
        }
    }
    let lookups = ep
        .trace
        .iter()
        .filter(|e| matches!(e.observation, Observation::Lookup { .. }))
        .count();
    verdict(
        identical && same_as_file && replayed && blocked_expanded == 0 && blocked_seen > 0 && violations == 0 && !emitted.is_empty(),
        format!(
            "traces identical {identical}, in-process trace matches file {same_as_file}, replay exact {replayed}; \
             {blocked_seen} blocked trends retrieved, {blocked_expanded} expanded; {} emitted of {lookups} looked up, {violations} violations",
            emitted.len()
        ),
    )
}

// ---------------------------------------------------------------- 13

fn end_to_end(a: &Run, b: &Run) -> Verdict {
    let Some(r) = report(a) else {
        return verdict(false, "no report.json");
    };
    let sitemap = std::fs::read_to_string(a.dir.join("sitemap.xml")).unwrap_or_default();
    let edges: Vec<EdgeLine> = read_jsonl(&a.dir.join("graph.jsonl")).unwrap_or_default();
    let (sitemap_ok, urls) = match roxmltree::Document::parse(&sitemap) {
        Ok(doc) => {
            let root = doc.root_element();
            let ns_ok = root.tag_name().name() == "urlset"
                && root.tag_name().namespace() == Some("http://www.sitemaps.org/schemas/sitemap/0.9");
            let urls: Vec<_> = root.children().filter(|n| n.has_tag_name("url")).collect();
            let locs_ok = urls
                .iter()
                .all(|u| u.children().filter(|c| c.has_tag_name("loc")).count() == 1);
            (ns_ok && locs_ok, urls.len())
        }
        Err(_) => (false, 0),
    };
    let pins = std::fs::read_to_string(a.dir.join("corpus/pins.jsonl")).unwrap_or_default().lines().count();
    let collections = read_collections(&a.dir.join("collections.jsonl")).map(|c| c.len()).unwrap_or(0);
    let linked: HashSet<String> = edges.iter().flat_map(|e| [e.source.to_string(), e.target.to_string()]).collect();
    let nodes = pins + collections;
    let metrics = r["metrics"].as_array().cloned().unwrap_or_default();
    let complete = metrics.len() >= 20 && metrics.iter().all(|m| m["value"].as_f64().is_some_and(f64::is_finite));
    let sums_a = r["checksums"].as_object().cloned().unwrap_or_default();
    let sums_b = report(b).and_then(|x| x["checksums"].as_object().cloned()).unwrap_or_default();
    let reproducible = !sums_a.is_empty() && sums_a == sums_b;
    verdict(
        a.ok && b.ok && a.secs < 60.0 && sitemap_ok && urls == nodes && linked.len() <= nodes && complete && reproducible,
        format!(
            "exit ok {}/{}, run {:.1}s (rerun {:.1}s); sitemap {urls} urls for {nodes} pages, strict-parse {sitemap_ok}; {} metrics complete {complete}; {} checksums identical {reproducible}",
            a.ok,
            b.ok,
            a.secs,
            b.secs,
            metrics.len(),
            sums_a.len()
        ),
    )
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    // the end-to-end runs go first so their timing is not shared with other work
    let first = run_pipeline(&tmp.path().join("run_a"));
    let second = run_pipeline(&tmp.path().join("run_b"));
    if !first.ok {
        eprintln!("{}", first.stdout);
    }

    let criteria: Vec<(&str, Box<dyn FnOnce() -> Verdict + '_>)> = vec![
        ("retention filter truth table", Box::new(filter_truth_table)),
        ("gradient fidelity", Box::new(gradient_fidelity)),
        ("uniform-logit identity", Box::new(uniform_logit_identity)),
        ("hnsw recall", Box::new(hnsw_recall)),
        ("hnsw sub-linearity", Box::new(hnsw_sublinear)),
        ("margin hinge", Box::new(margin_hinge)),
        ("ranker correct-rank", Box::new(ranker_correct_rank)),
        ("stratified sampling", Box::new(stratified_sampling)),
        ("pagerank", Box::new(pagerank_checks)),
        ("link-equity ablation", Box::new(|| link_ablation(&first))),
        ("intent-satisfying rate", Box::new(|| intent_rates(&first))),
        ("agent determinism and constraints", Box::new(|| agent_checks(&first, &second))),
        ("end-to-end pipeline", Box::new(|| end_to_end(&first, &second))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let (v, d) = timed(f);
        failed += usize::from(!v.pass);
        println!(
            "{} {:>2} {name}: {} [{:.2}s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            d.as_secs_f64()
        );
    }
    println!("acceptance: {} of 13 passed", 13 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
