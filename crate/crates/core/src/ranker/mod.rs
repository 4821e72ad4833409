//! Two-tower pin/query ranker trained with a margin ranking loss.

mod synthetic;
mod tower;

use std::cmp::Ordering;
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::seed::{stage_rng, sub_seed, Stage};
use crate::model::text::tokenize;
use crate::model::{DenseVector, HashingEmbedder, PinRecord, QueryRecord, Signature};
use crate::nn::checkpoint::{Checkpoint, CheckpointError, Tensor};
use crate::nn::{l2_norm_of, sgd_step, Linear, NnError};

pub use synthetic::{separable_triplets, SyntheticTriplets};
pub use tower::{LayerNorm, Mode, Tower, LAYER_NORM_EPS};

pub const DEFAULT_MARGIN: f64 = 0.95;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const DEFAULT_HIDDEN: [usize; 3] = [512, 384, 256];
pub const DEFAULT_OUTPUT: usize = 128;
/// Token count at which the query length feature saturates.
pub const LENGTH_CAP: usize = 16;

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("invalid ranker config: {0}")]
    InvalidConfig(String),
    #[error("feature vector has {actual} dims, tower expects {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("tower output has zero norm before normalization")]
    ZeroNorm,
    #[error("non-finite activations")]
    NonFinite,
    #[error("no triplets")]
    Empty,
    #[error("loss became non-finite at step {step}; parameter norms pin {pin_norm}, query {query_norm}")]
    NonFiniteLoss { step: usize, pin_norm: f64, query_norm: f64 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<NnError> for RankerError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::DimMismatch { expected, actual } => RankerError::DimMismatch { expected, actual },
            NnError::ZeroNorm { .. } => RankerError::ZeroNorm,
            NnError::NonFinite => RankerError::NonFinite,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerConfig {
    pub visual_dim: usize,
    pub text_dim: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub dropout: f64,
    pub margin: f64,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self::new(crate::model::records::DEFAULT_VISUAL_DIM, crate::model::records::DEFAULT_TEXT_DIM)
    }
}

impl TowerConfig {
    pub fn new(visual_dim: usize, text_dim: usize) -> Self {
        Self {
            visual_dim,
            text_dim,
            hidden: DEFAULT_HIDDEN.to_vec(),
            output: DEFAULT_OUTPUT,
            dropout: DEFAULT_DROPOUT,
            margin: DEFAULT_MARGIN,
        }
    }

    /// Scales hidden and output widths by `multiplier` (×0.125 gives
    /// `[64, 48, 32] → 16`).
    pub fn with_width_multiplier(mut self, multiplier: f64) -> Self {
        let scale = |w: usize| ((w as f64 * multiplier).round() as usize).max(1);
        self.hidden = DEFAULT_HIDDEN.iter().map(|&w| scale(w)).collect();
        self.output = scale(DEFAULT_OUTPUT);
        self
    }

    pub fn pin_input_dim(&self) -> usize {
        self.visual_dim + self.text_dim + 1
    }

    pub fn query_input_dim(&self) -> usize {
        self.text_dim + 1
    }

    pub fn validate(&self) -> Result<(), RankerError> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.output == 0 {
            return Err(RankerError::InvalidConfig("widths must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(RankerError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(RankerError::InvalidConfig(format!("margin {} must be positive", self.margin)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinFeatures {
    pub visual: Vec<f32>,
    pub text: Vec<f32>,
    pub perception: f32,
}

impl PinFeatures {
    pub fn from_pin(pin: &PinRecord) -> Self {
        Self {
            visual: pin.visual_embedding.clone(),
            text: pin.text_embedding.clone(),
            perception: pin.perception_score,
        }
    }

    pub fn concat(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.visual.len() + self.text.len() + 1);
        v.extend_from_slice(&self.visual);
        v.extend_from_slice(&self.text);
        v.push(self.perception);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    pub text: Vec<f32>,
    pub length_norm: f32,
}

pub fn length_norm(token_count: usize) -> f32 {
    token_count.min(LENGTH_CAP) as f32 / LENGTH_CAP as f32
}

impl QueryFeatures {
    pub fn from_text(text: &str, embedder: &HashingEmbedder) -> Self {
        Self {
            text: embedder.embed(text),
            length_norm: length_norm(tokenize(text).count()),
        }
    }

    /// Uses the stored embedding when it has the embedder's width.
    pub fn from_query(q: &QueryRecord, embedder: &HashingEmbedder) -> Self {
        let text = match &q.embedding {
            Some(e) if e.len() == embedder.dim() => e.clone(),
            _ => embedder.embed(&q.text),
        };
        Self {
            text,
            length_norm: length_norm(q.token_count()),
        }
    }

    pub fn concat(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.text.len() + 1);
        v.extend_from_slice(&self.text);
        v.push(self.length_norm);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerTriplet {
    pub pin: PinFeatures,
    pub positive: QueryFeatures,
    pub negative: QueryFeatures,
}

/// `max(0, pin·neg − pin·pos + m)` on unit vectors.
pub fn margin_loss(e_pin: &[f64], e_pos: &[f64], e_neg: &[f64], margin: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    (dot(e_pin, e_neg) - dot(e_pin, e_pos) + margin).max(0.0)
}

fn rows_of(vs: impl Iterator<Item = Vec<f32>>) -> Array2<f64> {
    let vs: Vec<Vec<f32>> = vs.collect();
    let d = vs.first().map_or(0, Vec::len);
    Array2::from_shape_fn((vs.len(), d), |(i, j)| f64::from(vs[i][j]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerModel {
    pub config: TowerConfig,
    pub pin: Tower,
    pub query: Tower,
}

/// Loss and hinge diagnostics for one evaluated batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    /// Smallest distance of any ReLU pre-activation or hinge argument from its kink.
    pub kink_distance: f64,
}

impl RankerModel {
    pub fn init(config: TowerConfig, seed: u64) -> Result<Self, RankerError> {
        config.validate()?;
        let mut rng = stage_rng(seed, Stage::Ranker);
        let pin = Tower::init(config.pin_input_dim(), &config.hidden, config.output, &mut rng);
        let query = Tower::init(config.query_input_dim(), &config.hidden, config.output, &mut rng);
        Ok(Self { config, pin, query })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            pin: self.pin.zeros_like(),
            query: self.query.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.pin.tensors();
        t.extend(self.query.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.pin.tensors_mut();
        t.extend(self.query.tensors_mut());
        t
    }

    fn check(&self, got: usize, expected: usize) -> Result<(), RankerError> {
        if got != expected {
            return Err(RankerError::DimMismatch { expected, actual: got });
        }
        Ok(())
    }

    pub fn embed_pin(&self, pin: &PinFeatures, mode: Mode, seed: u64) -> Result<DenseVector, RankerError> {
        let x = pin.concat();
        self.check(x.len(), self.config.pin_input_dim())?;
        tower_forward(&self.pin, &x, mode, self.config.dropout, seed)
    }

    pub fn embed_query(&self, q: &QueryFeatures, mode: Mode, seed: u64) -> Result<DenseVector, RankerError> {
        let x = q.concat();
        self.check(x.len(), self.config.query_input_dim())?;
        tower_forward(&self.query, &x, mode, self.config.dropout, seed)
    }

    pub fn embed_pins(&self, pins: &[PinFeatures]) -> Result<Array2<f64>, RankerError> {
        let x = rows_of(pins.iter().map(PinFeatures::concat));
        self.check(x.ncols(), self.config.pin_input_dim())?;
        Ok(self.pin.forward(x.view(), Mode::Eval, 0.0, 0)?)
    }

    pub fn embed_queries(&self, qs: &[QueryFeatures]) -> Result<Array2<f64>, RankerError> {
        let x = rows_of(qs.iter().map(QueryFeatures::concat));
        self.check(x.ncols(), self.config.query_input_dim())?;
        Ok(self.query.forward(x.view(), Mode::Eval, 0.0, 0)?)
    }

    /// Mean margin loss over `triplets` with gradients for both towers.
    /// Dropout masks come from `dropout_seed` in Train mode.
    pub fn objective(
        &self,
        triplets: &[&RankerTriplet],
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<(BatchLoss, RankerModel), RankerError> {
        if triplets.is_empty() {
            return Err(RankerError::Empty);
        }
        let b = triplets.len();
        let pins = rows_of(triplets.iter().map(|t| t.pin.concat()));
        let queries = rows_of(
            triplets
                .iter()
                .map(|t| t.positive.concat())
                .chain(triplets.iter().map(|t| t.negative.concat())),
        );
        self.check(pins.ncols(), self.config.pin_input_dim())?;
        self.check(queries.ncols(), self.config.query_input_dim())?;
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let pc = self.pin.forward_cached(pins.view(), mode, self.config.dropout, &mut rng)?;
        let qc = self.query.forward_cached(queries.view(), mode, self.config.dropout, &mut rng)?;
        let ep = &pc.output;
        let pos = qc.output.slice(s![..b, ..]);
        let neg = qc.output.slice(s![b.., ..]);
        let mut d_pin = Array2::<f64>::zeros(ep.dim());
        let mut d_q = Array2::<f64>::zeros(qc.output.dim());
        let mut loss = 0.0;
        let mut kink = pc.min_kink_distance().min(qc.min_kink_distance());
        let inv_b = 1.0 / b as f64;
        for i in 0..b {
            let e = ep.row(i);
            let arg = e.dot(&neg.row(i)) - e.dot(&pos.row(i)) + self.config.margin;
            kink = kink.min(arg.abs());
            if arg > 0.0 {
                loss += arg;
                let diff = &neg.row(i) - &pos.row(i);
                d_pin.row_mut(i).scaled_add(inv_b, &diff);
                d_q.row_mut(i).scaled_add(-inv_b, &e);
                d_q.row_mut(b + i).scaled_add(inv_b, &e);
            }
        }
        loss *= inv_b;
        if !loss.is_finite() {
            return Err(RankerError::NonFinite);
        }
        let mut grad = self.zeros_like();
        self.pin.backward(&pc, &d_pin, &mut grad.pin);
        self.query.backward(&qc, &d_q, &mut grad.query);
        Ok((BatchLoss { loss, kink_distance: kink }, grad))
    }

    pub fn objective_loss(&self, triplets: &[&RankerTriplet], mode: Mode, dropout_seed: u64) -> Result<f64, RankerError> {
        self.objective(triplets, mode, dropout_seed).map(|(l, _)| l.loss)
    }

    /// Eval-mode cosine of the two tower outputs, clamped to [−1, 1].
    pub fn score(&self, pin: &PinFeatures, query: &QueryFeatures) -> Result<f64, RankerError> {
        let p = self.embed_pin(pin, Mode::Eval, 0)?;
        let q = self.embed_query(query, Mode::Eval, 0)?;
        Ok(crate::model::vector::dot(p.values(), q.values()).clamp(-1.0, 1.0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("ranker");
        let c = &self.config;
        ck.meta.insert("visual_dim".into(), c.visual_dim.to_string());
        ck.meta.insert("text_dim".into(), c.text_dim.to_string());
        ck.meta.insert(
            "hidden".into(),
            c.hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        ck.meta.insert("output".into(), c.output.to_string());
        ck.meta.insert("dropout".into(), c.dropout.to_string());
        ck.meta.insert("margin".into(), c.margin.to_string());
        for (name, t) in [("pin", &self.pin), ("query", &self.query)] {
            for (i, (l, n)) in t.hidden.iter().zip(&t.norms).enumerate() {
                ck.push(format!("{name}.{i}.weight"), Tensor::from_matrix(&l.weight));
                ck.push(format!("{name}.{i}.bias"), Tensor::from_vector(&l.bias));
                ck.push(format!("{name}.{i}.gamma"), Tensor::from_vector(&n.gamma));
                ck.push(format!("{name}.{i}.beta"), Tensor::from_vector(&n.beta));
            }
            ck.push(format!("{name}.out.weight"), Tensor::from_matrix(&t.out.weight));
            ck.push(format!("{name}.out.bias"), Tensor::from_vector(&t.out.bias));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, RankerError> {
        if ck.kind != "ranker" {
            return Err(CheckpointError::Malformed(format!("expected ranker checkpoint, got `{}`", ck.kind)).into());
        }
        let num = |k: &str| -> Result<f64, RankerError> {
            ck.meta_value(k)?
                .parse()
                .map_err(|_| CheckpointError::Malformed(format!("meta `{k}`")).into())
        };
        let hidden: Vec<usize> = ck
            .meta_value("hidden")?
            .split(',')
            .map(|s| s.parse().map_err(|_| CheckpointError::Malformed("hidden".into())))
            .collect::<Result<_, _>>()?;
        let config = TowerConfig {
            visual_dim: num("visual_dim")? as usize,
            text_dim: num("text_dim")? as usize,
            hidden,
            output: num("output")? as usize,
            dropout: num("dropout")?,
            margin: num("margin")?,
        };
        config.validate()?;
        let tower = |name: &str, input: usize| -> Result<Tower, RankerError> {
            let mut hidden = Vec::new();
            let mut norms = Vec::new();
            let mut prev = input;
            for (i, &w) in config.hidden.iter().enumerate() {
                let weight = ck.tensor(&format!("{name}.{i}.weight"))?.to_matrix()?;
                if weight.dim() != (w, prev) {
                    return Err(CheckpointError::Malformed(format!("{name}.{i}.weight shape")).into());
                }
                hidden.push(Linear {
                    weight,
                    bias: ck.tensor(&format!("{name}.{i}.bias"))?.to_vector()?,
                });
                norms.push(LayerNorm {
                    gamma: ck.tensor(&format!("{name}.{i}.gamma"))?.to_vector()?,
                    beta: ck.tensor(&format!("{name}.{i}.beta"))?.to_vector()?,
                });
                prev = w;
            }
            let weight = ck.tensor(&format!("{name}.out.weight"))?.to_matrix()?;
            if weight.dim() != (config.output, prev) {
                return Err(CheckpointError::Malformed(format!("{name}.out.weight shape")).into());
            }
            let out = Linear {
                weight,
                bias: ck.tensor(&format!("{name}.out.bias"))?.to_vector()?,
            };
            Ok(Tower { hidden, norms, out })
        };
        Ok(Self {
            pin: tower("pin", config.pin_input_dim())?,
            query: tower("query", config.query_input_dim())?,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RankerError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, RankerError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Rounds every weight through f32 so in-memory and reloaded models agree.
    pub fn quantized(&self) -> Self {
        let mut m = self.clone();
        for t in m.tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
        m
    }
}

/// Single-row tower pass. Train mode draws its dropout mask from `seed`.
pub fn tower_forward(tower: &Tower, input: &[f32], mode: Mode, dropout: f64, seed: u64) -> Result<DenseVector, RankerError> {
    if input.len() != tower.input_dim() {
        return Err(RankerError::DimMismatch {
            expected: tower.input_dim(),
            actual: input.len(),
        });
    }
    let x = Array2::from_shape_fn((1, input.len()), |(_, j)| f64::from(input[j]));
    let y = tower.forward(x.view(), mode, dropout, seed)?;
    let v: Vec<f32> = y.row(0).iter().map(|&v| v as f32).collect();
    Ok(DenseVector::unit(v.clone()).unwrap_or_else(|_| DenseVector::new(v)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.01,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankerLogRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedRanker {
    pub model: RankerModel,
    pub log: Vec<RankerLogRow>,
}

impl TrainedRanker {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("step,loss,grad_norm\n");
        for r in &self.log {
            s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.grad_norm));
        }
        s
    }
}

/// Plain minibatch SGD over shuffled epochs of `triplets`.
pub fn train_ranker(
    triplets: &[RankerTriplet],
    tower: TowerConfig,
    config: &RankerTrainConfig,
) -> Result<TrainedRanker, RankerError> {
    if triplets.is_empty() {
        return Err(RankerError::Empty);
    }
    let mut model = RankerModel::init(tower, config.seed)?;
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, Stage::Ranker) ^ 0x5eed);
    let mut log = Vec::new();
    let mut step = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&RankerTriplet> = chunk.iter().map(|&i| &triplets[i]).collect();
            let dropout_seed = sub_seed(config.seed, Stage::Ranker).wrapping_add(step as u64 + 1);
            let (bl, grad) = match model.objective(&batch, Mode::Train, dropout_seed) {
                Ok(r) => r,
                Err(RankerError::NonFinite) => {
                    return Err(RankerError::NonFiniteLoss {
                        step,
                        pin_norm: l2_norm_of(&model.pin.tensors()),
                        query_norm: l2_norm_of(&model.query.tensors()),
                    })
                }
                Err(e) => return Err(e),
            };
            let grad_norm = l2_norm_of(&grad.tensors());
            if !grad_norm.is_finite() {
                return Err(RankerError::NonFiniteLoss {
                    step,
                    pin_norm: l2_norm_of(&model.pin.tensors()),
                    query_norm: l2_norm_of(&model.query.tensors()),
                });
            }
            log.push(RankerLogRow {
                step,
                loss: bl.loss,
                grad_norm,
            });
            sgd_step(model.tensors_mut(), grad.tensors(), config.learning_rate);
            step += 1;
        }
    }
    Ok(TrainedRanker { model, log })
}

/// Fraction of triplets whose positive strictly outscores the negative.
pub fn correct_rank(model: &RankerModel, triplets: &[RankerTriplet]) -> Result<f64, RankerError> {
    if triplets.is_empty() {
        return Err(RankerError::Empty);
    }
    let pins = model.embed_pins(&triplets.iter().map(|t| t.pin.clone()).collect::<Vec<_>>())?;
    let pos = model.embed_queries(&triplets.iter().map(|t| t.positive.clone()).collect::<Vec<_>>())?;
    let neg = model.embed_queries(&triplets.iter().map(|t| t.negative.clone()).collect::<Vec<_>>())?;
    let wins = (0..triplets.len())
        .filter(|&i| pins.row(i).dot(&pos.row(i)) > pins.row(i).dot(&neg.row(i)))
        .count();
    Ok(wins as f64 / triplets.len() as f64)
}

/// Correct-rank over precomputed scores; ties fail.
pub fn correct_rank_from_scores(scores: &[(f64, f64)]) -> Result<f64, RankerError> {
    if scores.is_empty() {
        return Err(RankerError::Empty);
    }
    Ok(scores.iter().filter(|(p, n)| p > n).count() as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub pin_signature: Signature,
    pub query_text: String,
    pub score: f64,
    pub rank: usize,
}

/// Orders by descending score, then by text.
pub fn order_scored(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
}

/// Top-`k` candidates for one pin; ranks start at 1.
pub fn rank_annotations(
    model: &RankerModel,
    pin_signature: Signature,
    pin: &PinFeatures,
    candidates: &[(String, QueryFeatures)],
    top_k: usize,
) -> Result<Vec<Annotation>, RankerError> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let p = model.embed_pins(std::slice::from_ref(pin))?;
    let q = model.embed_queries(&candidates.iter().map(|c| c.1.clone()).collect::<Vec<_>>())?;
    let sims = q.dot(&p.row(0));
    let mut scored: Vec<(String, f64)> = candidates
        .iter()
        .zip(sims.iter())
        .map(|((t, _), &s)| (t.clone(), s.clamp(-1.0, 1.0)))
        .collect();
    order_scored(&mut scored);
    Ok(scored
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(i, (query_text, score))| Annotation {
            pin_signature,
            query_text,
            score,
            rank: i + 1,
        })
        .collect())
}
