use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{softmax_contrastive, TaskType};
use super::EncoderError;
use crate::model::{DenseVector, HashingEmbedder, PinRecord};
use crate::nn::checkpoint::{Checkpoint, CheckpointError, Tensor};
use crate::nn::{Linear, Mlp, MlpCache};

/// MLP with ReLU hidden layers and an L2-normalized output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub mlp: Mlp,
}

impl EncoderModel {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dims: &[usize], output_dim: usize, rng: &mut R) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(output_dim);
        Self { mlp: Mlp::init(&dims, rng) }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Self {
        Self { mlp: Mlp { layers } }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        let d = self.mlp.dims();
        d[1..d.len() - 1].to_vec()
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn encode(&self, input: &DenseVector) -> Result<DenseVector, EncoderError> {
        if input.dim() != self.input_dim() {
            return Err(EncoderError::DimMismatch {
                expected: self.input_dim(),
                actual: input.dim(),
            });
        }
        if input.values().iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        let x = Array2::from_shape_fn((1, input.dim()), |(_, j)| f64::from(input.values()[j]));
        let y = self.encode_batch(x.view())?;
        Ok(row_to_unit(y.row(0).iter().copied()))
    }

    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, EncoderError> {
        Ok(self.mlp.forward(x)?)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mlp: self.mlp.zeros_like(),
        }
    }

    fn push_tensors(&self, prefix: &str, ck: &mut Checkpoint) {
        ck.meta.insert(format!("{prefix}.layers"), self.mlp.layers.len().to_string());
        for (i, l) in self.mlp.layers.iter().enumerate() {
            ck.push(format!("{prefix}.{i}.weight"), Tensor::from_matrix(&l.weight));
            ck.push(format!("{prefix}.{i}.bias"), Tensor::from_vector(&l.bias));
        }
    }

    fn from_checkpoint(prefix: &str, ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let n: usize = ck
            .meta_value(&format!("{prefix}.layers"))?
            .parse()
            .map_err(|_| CheckpointError::Malformed(format!("{prefix}.layers")))?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let weight = ck.tensor(&format!("{prefix}.{i}.weight"))?.to_matrix()?;
            let bias = ck.tensor(&format!("{prefix}.{i}.bias"))?.to_vector()?;
            if bias.len() != weight.nrows() {
                return Err(CheckpointError::Malformed(format!("{prefix}.{i} bias length")));
            }
            if let Some(prev) = layers.last().map(Linear::output_dim) {
                if prev != weight.ncols() {
                    return Err(CheckpointError::Malformed(format!("{prefix}.{i} input width")));
                }
            }
            layers.push(Linear { weight, bias });
        }
        if layers.is_empty() {
            return Err(CheckpointError::Malformed(format!("{prefix} has no layers")));
        }
        Ok(Self::from_layers(layers))
    }
}

fn row_to_unit(values: impl Iterator<Item = f64>) -> DenseVector {
    let v: Vec<f64> = values.collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let out: Vec<f32> = v.iter().map(|x| (x / n) as f32).collect();
    DenseVector::unit(out.clone()).unwrap_or_else(|_| DenseVector::new(out))
}

fn to_matrix(rows: &[Vec<f32>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| f64::from(rows[i][j]))
}

fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts match")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PinClip,
    SearchSage,
}

/// Image, text and aggregator encoders. The aggregator merges the
/// concatenated image and text embeddings into one pin embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PinClipModel {
    pub image: EncoderModel,
    pub text: EncoderModel,
    pub aggregator: EncoderModel,
}

/// Raw features for one PinCLIP step: image/text rows of the same pins, and
/// two pin lists whose row `i` were saved to the same board.
#[derive(Debug, Clone, PartialEq)]
pub struct PinClipInputs {
    pub image: Array2<f64>,
    pub text: Array2<f64>,
    pub left_image: Array2<f64>,
    pub left_text: Array2<f64>,
    pub right_image: Array2<f64>,
    pub right_text: Array2<f64>,
}

struct AggCache {
    img: MlpCache,
    txt: MlpCache,
    agg: MlpCache,
}

impl PinClipModel {
    pub fn init<R: Rng + ?Sized>(d_v: usize, d_t: usize, hidden: &[usize], d: usize, rng: &mut R) -> Self {
        Self {
            image: EncoderModel::init(d_v, hidden, d, rng),
            text: EncoderModel::init(d_t, hidden, d, rng),
            aggregator: EncoderModel::init(2 * d, hidden, d, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            image: self.image.zeros_like(),
            text: self.text.zeros_like(),
            aggregator: self.aggregator.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.image.mlp.tensors();
        t.extend(self.text.mlp.tensors());
        t.extend(self.aggregator.mlp.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.image.mlp.tensors_mut();
        t.extend(self.text.mlp.tensors_mut());
        t.extend(self.aggregator.mlp.tensors_mut());
        t
    }

    fn aggregate_cached(&self, image: &Array2<f64>, text: &Array2<f64>) -> Result<AggCache, EncoderError> {
        let img = self.image.mlp.forward_cached(image.view())?;
        let txt = self.text.mlp.forward_cached(text.view())?;
        let agg = self
            .aggregator
            .mlp
            .forward_cached(concat_cols(&img.output, &txt.output).view())?;
        Ok(AggCache { img, txt, agg })
    }

    fn aggregate_backward(&self, c: &AggCache, d_out: &Array2<f64>, grad: &mut PinClipModel) {
        let d_cat = self.aggregator.mlp.backward(&c.agg, d_out, &mut grad.aggregator.mlp);
        let d = self.image.output_dim();
        let d_img = d_cat.slice(s![.., ..d]).to_owned();
        let d_txt = d_cat.slice(s![.., d..]).to_owned();
        self.image.mlp.backward(&c.img, &d_img, &mut grad.image.mlp);
        self.text.mlp.backward(&c.txt, &d_txt, &mut grad.text.mlp);
    }

    /// Summed image-text and pin-pin loss with gradients for every parameter.
    pub fn objective(&self, inputs: &PinClipInputs, temperature: f64) -> Result<(f64, PinClipModel), EncoderError> {
        let mut grad = self.zeros_like();
        let img = self.image.mlp.forward_cached(inputs.image.view())?;
        let txt = self.text.mlp.forward_cached(inputs.text.view())?;
        let it = softmax_contrastive(img.output.view(), txt.output.view(), temperature)?;
        self.image.mlp.backward(&img, &it.d_anchors, &mut grad.image.mlp);
        self.text.mlp.backward(&txt, &it.d_positives, &mut grad.text.mlp);

        let left = self.aggregate_cached(&inputs.left_image, &inputs.left_text)?;
        let right = self.aggregate_cached(&inputs.right_image, &inputs.right_text)?;
        let pp = softmax_contrastive(left.agg.output.view(), right.agg.output.view(), temperature)?;
        self.aggregate_backward(&left, &pp.d_anchors, &mut grad);
        self.aggregate_backward(&right, &pp.d_positives, &mut grad);
        Ok((it.loss + pp.loss, grad))
    }

    pub fn objective_loss(&self, inputs: &PinClipInputs, temperature: f64) -> Result<f64, EncoderError> {
        let it = softmax_contrastive(
            self.image.encode_batch(inputs.image.view())?.view(),
            self.text.encode_batch(inputs.text.view())?.view(),
            temperature,
        )?;
        let l = self.aggregate(&inputs.left_image, &inputs.left_text)?;
        let r = self.aggregate(&inputs.right_image, &inputs.right_text)?;
        let pp = softmax_contrastive(l.view(), r.view(), temperature)?;
        Ok(it.loss + pp.loss)
    }

    pub fn aggregate(&self, image: &Array2<f64>, text: &Array2<f64>) -> Result<Array2<f64>, EncoderError> {
        let i = self.image.encode_batch(image.view())?;
        let t = self.text.encode_batch(text.view())?;
        self.aggregator.encode_batch(concat_cols(&i, &t).view())
    }
}

/// Query encoder plus entity encoder over concatenated `[visual; text]`
/// features. Boards are encoded from the mean features of their pins.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSageModel {
    pub query: EncoderModel,
    pub entity: EncoderModel,
}

/// Raw per-task features: `(query rows, entity rows)` with row `i` paired.
pub type SearchSageInputs = BTreeMap<TaskType, (Array2<f64>, Array2<f64>)>;

impl SearchSageModel {
    pub fn init<R: Rng + ?Sized>(d_v: usize, d_t: usize, hidden: &[usize], d: usize, rng: &mut R) -> Self {
        Self {
            query: EncoderModel::init(d_t, hidden, d, rng),
            entity: EncoderModel::init(d_v + d_t, hidden, d, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            query: self.query.zeros_like(),
            entity: self.entity.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.query.mlp.tensors();
        t.extend(self.entity.mlp.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.query.mlp.tensors_mut();
        t.extend(self.entity.mlp.tensors_mut());
        t
    }

    /// Sum over tasks of the per-task softmax loss; both encoders are shared
    /// across tasks so their gradients accumulate.
    pub fn objective(&self, inputs: &SearchSageInputs, temperature: f64) -> Result<(f64, SearchSageModel), EncoderError> {
        if inputs.is_empty() {
            return Err(EncoderError::EmptyTaskSet);
        }
        let mut grad = self.zeros_like();
        let mut total = 0.0;
        for (q, e) in inputs.values() {
            let qc = self.query.mlp.forward_cached(q.view())?;
            let ec = self.entity.mlp.forward_cached(e.view())?;
            let lg = softmax_contrastive(qc.output.view(), ec.output.view(), temperature)?;
            self.query.mlp.backward(&qc, &lg.d_anchors, &mut grad.query.mlp);
            self.entity.mlp.backward(&ec, &lg.d_positives, &mut grad.entity.mlp);
            total += lg.loss;
        }
        Ok((total, grad))
    }

    pub fn objective_loss(&self, inputs: &SearchSageInputs, temperature: f64) -> Result<f64, EncoderError> {
        if inputs.is_empty() {
            return Err(EncoderError::EmptyTaskSet);
        }
        let mut total = 0.0;
        for (q, e) in inputs.values() {
            total += softmax_contrastive(
                self.query.encode_batch(q.view())?.view(),
                self.entity.encode_batch(e.view())?.view(),
                temperature,
            )?
            .loss;
        }
        Ok(total)
    }
}

/// A trained encoder family, exposing the three embeddings downstream stages
/// need: pins, topic queries, and free text on the judge's pathway.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderBundle {
    PinClip(PinClipModel),
    SearchSage(SearchSageModel),
}

impl EncoderBundle {
    pub fn kind(&self) -> LossKind {
        match self {
            EncoderBundle::PinClip(_) => LossKind::PinClip,
            EncoderBundle::SearchSage(_) => LossKind::SearchSage,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EncoderBundle::PinClip(m) => m.aggregator.output_dim(),
            EncoderBundle::SearchSage(m) => m.query.output_dim(),
        }
    }

    pub fn text_dim(&self) -> usize {
        match self {
            EncoderBundle::PinClip(m) => m.text.input_dim(),
            EncoderBundle::SearchSage(m) => m.query.input_dim(),
        }
    }

    pub fn embedder(&self) -> HashingEmbedder {
        HashingEmbedder::new(self.text_dim())
    }

    /// Embeds many pins at once; rows follow `pins` order.
    pub fn encode_pins(&self, pins: &[&PinRecord]) -> Result<Vec<DenseVector>, EncoderError> {
        if pins.is_empty() {
            return Ok(Vec::new());
        }
        let v = to_matrix(&pins.iter().map(|p| p.visual_embedding.clone()).collect::<Vec<_>>());
        let t = to_matrix(&pins.iter().map(|p| p.text_embedding.clone()).collect::<Vec<_>>());
        let out = match self {
            EncoderBundle::PinClip(m) => m.aggregate(&v, &t)?,
            EncoderBundle::SearchSage(m) => m.entity.encode_batch(concat_cols(&v, &t).view())?,
        };
        Ok(out.rows().into_iter().map(|r| row_to_unit(r.iter().copied())).collect())
    }

    pub fn encode_pin(&self, pin: &PinRecord) -> Result<DenseVector, EncoderError> {
        Ok(self.encode_pins(&[pin])?.remove(0))
    }

    /// Topic queries go through the text side. For PinCLIP the text
    /// embedding is fed to both aggregator slots so topics land in pin space.
    pub fn encode_topic(&self, topic: &str) -> Result<DenseVector, EncoderError> {
        let t = self.embedder().embed(topic);
        let tm = to_matrix(std::slice::from_ref(&t));
        let out = match self {
            EncoderBundle::PinClip(m) => {
                let e = m.text.encode_batch(tm.view())?;
                m.aggregator.encode_batch(concat_cols(&e, &e).view())?
            }
            EncoderBundle::SearchSage(m) => m.query.encode_batch(tm.view())?,
        };
        Ok(row_to_unit(out.row(0).iter().copied()))
    }

    /// Free text through the text encoder alone.
    pub fn encode_text(&self, text: &str) -> Result<DenseVector, EncoderError> {
        let t = self.embedder().embed(text);
        let tm = to_matrix(std::slice::from_ref(&t));
        let out = match self {
            EncoderBundle::PinClip(m) => m.text.encode_batch(tm.view())?,
            EncoderBundle::SearchSage(m) => m.query.encode_batch(tm.view())?,
        };
        Ok(row_to_unit(out.row(0).iter().copied()))
    }

    pub fn to_checkpoint(&self, temperature: f64) -> Checkpoint {
        let mut ck = match self {
            EncoderBundle::PinClip(m) => {
                let mut ck = Checkpoint::new("pinclip");
                m.image.push_tensors("image", &mut ck);
                m.text.push_tensors("text", &mut ck);
                m.aggregator.push_tensors("aggregator", &mut ck);
                ck
            }
            EncoderBundle::SearchSage(m) => {
                let mut ck = Checkpoint::new("searchsage");
                m.query.push_tensors("query", &mut ck);
                m.entity.push_tensors("entity", &mut ck);
                ck
            }
        };
        ck.meta.insert("temperature".into(), temperature.to_string());
        ck.meta.insert("output_dim".into(), self.output_dim().to_string());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        match ck.kind.as_str() {
            "pinclip" => Ok(EncoderBundle::PinClip(PinClipModel {
                image: EncoderModel::from_checkpoint("image", ck)?,
                text: EncoderModel::from_checkpoint("text", ck)?,
                aggregator: EncoderModel::from_checkpoint("aggregator", ck)?,
            })),
            "searchsage" => Ok(EncoderBundle::SearchSage(SearchSageModel {
                query: EncoderModel::from_checkpoint("query", ck)?,
                entity: EncoderModel::from_checkpoint("entity", ck)?,
            })),
            other => Err(CheckpointError::Malformed(format!("unknown encoder kind `{other}`"))),
        }
    }

    pub fn save(&self, path: &Path, temperature: f64) -> Result<(), CheckpointError> {
        self.to_checkpoint(temperature).save(path)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Rounds every weight through f32 so in-memory and reloaded bundles agree.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        let tensors = match &mut out {
            EncoderBundle::PinClip(m) => m.tensors_mut(),
            EncoderBundle::SearchSage(m) => m.tensors_mut(),
        };
        for t in tensors {
            for v in t.iter_mut() {
                *v = f64::from(*v as f32);
            }
        }
        out
    }
}

pub(crate) fn mean_rows(rows: &[&[f32]]) -> Array1<f64> {
    let d = rows[0].len();
    let mut m = Array1::<f64>::zeros(d);
    for r in rows {
        for (a, &b) in m.iter_mut().zip(r.iter()) {
            *a += f64::from(b);
        }
    }
    m / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::seed::rng;

    #[test]
    fn zero_final_layer_surfaces_zero_norm() {
        let mut m = EncoderModel::init(4, &[3], 2, &mut rng(1));
        m.mlp.layers[1] = Linear::zeros(3, 2);
        let x = DenseVector::new(vec![0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(m.encode(&x), Err(EncoderError::ZeroNorm)));
    }

    #[test]
    fn identity_layer_normalizes_input() {
        let mut l = Linear::zeros(3, 3);
        for i in 0..3 {
            l.weight[[i, i]] = 2.0;
        }
        let m = EncoderModel::from_layers(vec![l]);
        let x = DenseVector::new(vec![0.6, 0.0, 0.8]);
        let y = m.encode(&x).unwrap();
        assert_eq!(y.values(), &[0.6f32, 0.0, 0.8][..]);
        assert!(y.is_normalized());
    }

    #[test]
    fn encode_is_deterministic_and_checks_dims() {
        let m = EncoderModel::init(5, &[8], 4, &mut rng(9));
        let x = DenseVector::new(vec![0.1, -0.3, 0.7, 0.2, 0.0]);
        assert_eq!(m.encode(&x).unwrap(), m.encode(&x).unwrap());
        let bad = DenseVector::new(vec![1.0; 3]);
        assert!(matches!(m.encode(&bad), Err(EncoderError::DimMismatch { expected: 5, actual: 3 })));
    }

    #[test]
    fn bundle_checkpoint_round_trip() {
        let b = EncoderBundle::SearchSage(SearchSageModel::init(6, 5, &[7], 3, &mut rng(4))).quantized();
        let mut buf = Vec::new();
        b.to_checkpoint(0.07).write_to(&mut buf).unwrap();
        let back = EncoderBundle::from_checkpoint(&Checkpoint::read_from(&mut buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back, b);
        let p = EncoderBundle::PinClip(PinClipModel::init(6, 5, &[7], 3, &mut rng(4))).quantized();
        let mut buf = Vec::new();
        p.to_checkpoint(0.07).write_to(&mut buf).unwrap();
        assert_eq!(EncoderBundle::from_checkpoint(&Checkpoint::read_from(&mut buf.as_slice()).unwrap()).unwrap(), p);
    }
}
