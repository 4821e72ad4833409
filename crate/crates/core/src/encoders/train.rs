use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use super::loss::TaskType;
use super::models::{mean_rows, EncoderBundle, LossKind, PinClipInputs, PinClipModel, SearchSageInputs, SearchSageModel};
use super::EncoderError;
use crate::curation::retain;
use crate::model::seed::{stage_rng, Stage};
use crate::model::{Corpus, HashingEmbedder, Signature};
use crate::nn::{l2_norm_of, sgd_step};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub temperature: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            output_dim: 64,
            temperature: 0.07,
            batch_size: 128,
            steps: 300,
            learning_rate: 0.05,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn initial_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    /// Mean loss over the first and last `window` steps.
    pub fn head_tail_means(&self, window: usize) -> Option<(f64, f64)> {
        if self.rows.is_empty() {
            return None;
        }
        let w = window.clamp(1, self.rows.len());
        let mean = |rs: &[LogRow]| rs.iter().map(|r| r.loss).sum::<f64>() / rs.len() as f64;
        Some((mean(&self.rows[..w]), mean(&self.rows[self.rows.len() - w..])))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,grad_norm\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.step, r.loss, r.grad_norm);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub bundle: EncoderBundle,
    pub log: TrainingLog,
}

/// Index pairs of pins that share a board, in signature order.
pub fn board_pairs(corpus: &Corpus) -> Vec<(usize, usize)> {
    let mut boards: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.pins.iter().enumerate() {
        if let Some(b) = p.board_id {
            boards.entry(b).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for members in boards.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                out.push((i, j));
            }
        }
    }
    out
}

/// Retained engagement rows as `(query text, pin index)`.
pub fn engagement_pairs(corpus: &Corpus) -> Vec<(String, usize)> {
    let pos: BTreeMap<Signature, usize> = corpus.pins.iter().enumerate().map(|(i, p)| (p.signature, i)).collect();
    corpus
        .engagement
        .iter()
        .filter(|e| retain(e))
        .filter_map(|e| pos.get(&e.pin_signature).map(|&i| (e.query_text.clone(), i)))
        .collect()
}

fn check_config(config: &EncoderConfig) -> Result<(), EncoderError> {
    if !(config.temperature > 0.0) || !config.temperature.is_finite() {
        return Err(EncoderError::InvalidTemperature(config.temperature));
    }
    Ok(())
}

fn sample(rng: &mut ChaCha8Rng, n: usize, b: usize) -> Vec<usize> {
    index::sample(rng, n, b.min(n)).into_vec()
}

fn rows(corpus: &Corpus, idx: impl Iterator<Item = usize>, visual: bool) -> Array2<f64> {
    let idx: Vec<usize> = idx.collect();
    let d = if visual { corpus.dims.visual } else { corpus.dims.text };
    Array2::from_shape_fn((idx.len(), d), |(r, c)| {
        let p = &corpus.pins[idx[r]];
        f64::from(if visual { p.visual_embedding[c] } else { p.text_embedding[c] })
    })
}

fn nan_guard<G>(
    step: usize,
    r: Result<(f64, G), EncoderError>,
    norms: impl FnOnce() -> Vec<f64>,
) -> Result<(f64, G), EncoderError> {
    match r {
        Ok((l, g)) if l.is_finite() => Ok((l, g)),
        Ok(_) | Err(EncoderError::NonFiniteLoss) => Err(EncoderError::NanLoss {
            step,
            param_norms: norms(),
        }),
        Err(e) => Err(e),
    }
}

pub fn train_pinclip(corpus: &Corpus, config: &EncoderConfig) -> Result<(PinClipModel, TrainingLog), EncoderError> {
    check_config(config)?;
    let mut rng = stage_rng(config.seed, Stage::Encoder);
    let mut model = PinClipModel::init(corpus.dims.visual, corpus.dims.text, &config.hidden, config.output_dim, &mut rng);
    let pairs = board_pairs(corpus);
    let n = corpus.pins.len();
    if n < 2 || pairs.len() < 2 {
        return Err(EncoderError::NoPairs(format!("{n} pins, {} board pairs", pairs.len())));
    }
    let mut log = TrainingLog::default();
    for step in 0..config.steps {
        let pins = sample(&mut rng, n, config.batch_size);
        let pp: Vec<(usize, usize)> = sample(&mut rng, pairs.len(), config.batch_size)
            .into_iter()
            .map(|k| pairs[k])
            .collect();
        let inputs = PinClipInputs {
            image: rows(corpus, pins.iter().copied(), true),
            text: rows(corpus, pins.iter().copied(), false),
            left_image: rows(corpus, pp.iter().map(|p| p.0), true),
            left_text: rows(corpus, pp.iter().map(|p| p.0), false),
            right_image: rows(corpus, pp.iter().map(|p| p.1), true),
            right_text: rows(corpus, pp.iter().map(|p| p.1), false),
        };
        let norms = || model.tensors().iter().map(|t| l2_norm_of(&[t])).collect();
        let (loss, grad) = nan_guard(step, model.objective(&inputs, config.temperature), norms)?;
        let grad_norm = l2_norm_of(&grad.tensors());
        log.rows.push(LogRow { step, loss, grad_norm });
        sgd_step(model.tensors_mut(), grad.tensors(), config.learning_rate);
    }
    Ok((model, log))
}

pub fn train_searchsage(corpus: &Corpus, config: &EncoderConfig) -> Result<(SearchSageModel, TrainingLog), EncoderError> {
    check_config(config)?;
    let mut rng = stage_rng(config.seed, Stage::Encoder);
    let mut model = SearchSageModel::init(corpus.dims.visual, corpus.dims.text, &config.hidden, config.output_dim, &mut rng);
    let embedder = HashingEmbedder::new(corpus.dims.text);
    let query_vec = |text: &str| -> Vec<f32> {
        match corpus.query(text).and_then(|q| q.embedding.clone()) {
            Some(e) if e.len() == corpus.dims.text => e,
            _ => embedder.embed(text),
        }
    };
    let entity_row = |i: usize| -> Vec<f32> {
        let p = &corpus.pins[i];
        p.visual_embedding.iter().chain(&p.text_embedding).copied().collect()
    };

    let pin_pairs = engagement_pairs(corpus);
    let mut boards: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.pins.iter().enumerate() {
        if let Some(b) = p.board_id {
            boards.entry(b).or_default().push(i);
        }
    }
    let board_feat: BTreeMap<u64, Vec<f32>> = boards
        .iter()
        .map(|(&b, members)| {
            let rs: Vec<Vec<f32>> = members.iter().map(|&i| entity_row(i)).collect();
            let refs: Vec<&[f32]> = rs.iter().map(Vec::as_slice).collect();
            (b, mean_rows(&refs).iter().map(|&v| v as f32).collect())
        })
        .collect();
    let board_pairs: Vec<(String, u64)> = pin_pairs
        .iter()
        .filter_map(|(q, i)| corpus.pins[*i].board_id.map(|b| (q.clone(), b)))
        .collect();
    if pin_pairs.len() < 2 {
        return Err(EncoderError::NoPairs(format!("{} engagement pairs", pin_pairs.len())));
    }

    let to_m = |rs: Vec<Vec<f32>>| -> Array2<f64> {
        let d = rs[0].len();
        Array2::from_shape_fn((rs.len(), d), |(i, j)| f64::from(rs[i][j]))
    };
    let mut log = TrainingLog::default();
    for step in 0..config.steps {
        let mut inputs: SearchSageInputs = BTreeMap::new();
        let ps = sample(&mut rng, pin_pairs.len(), config.batch_size);
        inputs.insert(
            TaskType::QueryPin,
            (
                to_m(ps.iter().map(|&k| query_vec(&pin_pairs[k].0)).collect()),
                to_m(ps.iter().map(|&k| entity_row(pin_pairs[k].1)).collect()),
            ),
        );
        if board_pairs.len() >= 2 {
            let bs = sample(&mut rng, board_pairs.len(), config.batch_size);
            inputs.insert(
                TaskType::QueryBoard,
                (
                    to_m(bs.iter().map(|&k| query_vec(&board_pairs[k].0)).collect()),
                    to_m(bs.iter().map(|&k| board_feat[&board_pairs[k].1].clone()).collect()),
                ),
            );
        }
        let norms = || model.tensors().iter().map(|t| l2_norm_of(&[t])).collect();
        let (loss, grad) = nan_guard(step, model.objective(&inputs, config.temperature), norms)?;
        let grad_norm = l2_norm_of(&grad.tensors());
        log.rows.push(LogRow { step, loss, grad_norm });
        sgd_step(model.tensors_mut(), grad.tensors(), config.learning_rate);
    }
    Ok((model, log))
}

pub fn train_encoder(config: &EncoderConfig, corpus: &Corpus, kind: LossKind) -> Result<TrainedEncoder, EncoderError> {
    let (bundle, log) = match kind {
        LossKind::PinClip => {
            let (m, l) = train_pinclip(corpus, config)?;
            (EncoderBundle::PinClip(m), l)
        }
        LossKind::SearchSage => {
            let (m, l) = train_searchsage(corpus, config)?;
            (EncoderBundle::SearchSage(m), l)
        }
    };
    Ok(TrainedEncoder { bundle, log })
}
