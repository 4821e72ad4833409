use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::EncoderError;

/// Paired unit-norm rows for an in-batch-negative softmax loss. Row `i` of
/// `positives` is the positive for anchor `i`; every other row is a negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    anchors: Array2<f64>,
    positives: Array2<f64>,
    temperature: f64,
}

const ROW_NORM_TOLERANCE: f64 = 1e-6;

impl ContrastiveBatch {
    pub fn new(anchors: Array2<f64>, positives: Array2<f64>, temperature: f64) -> Result<Self, EncoderError> {
        check_shapes(anchors.view(), positives.view(), temperature)?;
        for (name, m) in [("anchors", &anchors), ("positives", &positives)] {
            for (i, row) in m.rows().into_iter().enumerate() {
                let n = row.dot(&row).sqrt();
                if (n - 1.0).abs() > ROW_NORM_TOLERANCE {
                    return Err(EncoderError::NotUnitRow { matrix: name, row: i, norm: n });
                }
            }
        }
        Ok(Self { anchors, positives, temperature })
    }

    pub fn anchors(&self) -> &Array2<f64> {
        &self.anchors
    }

    pub fn positives(&self) -> &Array2<f64> {
        &self.positives
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.anchors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.nrows() == 0
    }
}

fn check_shapes(a: ArrayView2<f64>, p: ArrayView2<f64>, temperature: f64) -> Result<(), EncoderError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(EncoderError::InvalidTemperature(temperature));
    }
    if a.dim() != p.dim() {
        return Err(EncoderError::ShapeMismatch {
            anchors: a.dim(),
            positives: p.dim(),
        });
    }
    if a.nrows() < 2 {
        return Err(EncoderError::BatchTooSmall(a.nrows()));
    }
    Ok(())
}

/// Loss value with exact partials with respect to both inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub d_anchors: Array2<f64>,
    pub d_positives: Array2<f64>,
}

/// Mean over rows of `−log softmax_k(xᵢ·yₖ/τ)[i]`.
///
/// Works on raw matrices without the unit-row check so callers can probe it
/// at arbitrary points. With `S = X Yᵀ / τ` and row-softmax `P`,
/// `∂L/∂S = (P − I) / B`, `∂L/∂X = ∂L/∂S · Y / τ`, `∂L/∂Y = (∂L/∂S)ᵀ · X / τ`.
pub fn softmax_contrastive(
    anchors: ArrayView2<f64>,
    positives: ArrayView2<f64>,
    temperature: f64,
) -> Result<LossGrad, EncoderError> {
    check_shapes(anchors, positives, temperature)?;
    let b = anchors.nrows();
    let logits = anchors.dot(&positives.t()) / temperature;
    let mut probs = Array2::<f64>::zeros((b, b));
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[i];
        for (j, &v) in row.iter().enumerate() {
            probs[[i, j]] = (v - lse).exp();
        }
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(EncoderError::NonFiniteLoss);
    }
    let mut d_logits = probs;
    for i in 0..b {
        d_logits[[i, i]] -= 1.0;
    }
    d_logits /= b as f64 * temperature;
    let d_anchors = d_logits.dot(&positives);
    let d_positives = d_logits.t().dot(&anchors);
    Ok(LossGrad {
        loss,
        d_anchors,
        d_positives,
    })
}

pub fn softmax_contrastive_loss(batch: &ContrastiveBatch) -> Result<LossGrad, EncoderError> {
    softmax_contrastive(batch.anchors.view(), batch.positives.view(), batch.temperature)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinClipLoss {
    pub loss: f64,
    pub image_text: LossGrad,
    pub pin_pin: LossGrad,
}

/// Image-text loss plus pin-pin loss.
pub fn pinclip_loss(image_text: &ContrastiveBatch, pin_pin: &ContrastiveBatch) -> Result<PinClipLoss, EncoderError> {
    let it = softmax_contrastive_loss(image_text)?;
    let pp = softmax_contrastive_loss(pin_pin)?;
    Ok(PinClipLoss {
        loss: it.loss + pp.loss,
        image_text: it,
        pin_pin: pp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    QueryPin,
    QueryBoard,
    QueryProduct,
}

/// One contrastive batch per relation type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskBatchSet {
    tasks: BTreeMap<TaskType, ContrastiveBatch>,
}

impl TaskBatchSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: TaskType, batch: ContrastiveBatch) {
        self.tasks.insert(task, batch);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TaskType, &ContrastiveBatch)> {
        self.tasks.iter()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSageLoss {
    pub loss: f64,
    pub per_task: BTreeMap<TaskType, LossGrad>,
}

/// Sum over task types of each task's mean softmax loss.
pub fn searchsage_loss(tasks: &TaskBatchSet) -> Result<SearchSageLoss, EncoderError> {
    if tasks.is_empty() {
        return Err(EncoderError::EmptyTaskSet);
    }
    let mut per_task = BTreeMap::new();
    let mut loss = 0.0;
    for (t, batch) in tasks.iter() {
        let lg = softmax_contrastive_loss(batch)?;
        loss += lg.loss;
        per_task.insert(*t, lg);
    }
    Ok(SearchSageLoss { loss, per_task })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_rows_give_log_batch() {
        for b in [2usize, 4, 8, 128] {
            let rows = Array2::from_shape_fn((b, 3), |(_, j)| [0.6, 0.8, 0.0][j]);
            let batch = ContrastiveBatch::new(rows.clone(), rows, 0.07).unwrap();
            let l = softmax_contrastive_loss(&batch).unwrap().loss;
            assert!((l - (b as f64).ln()).abs() < 1e-12, "B={b}: {l}");
        }
    }

    #[test]
    fn two_row_closed_form() {
        // x1·y1 = 1, x1·y2 = −1; row 2 mirrors row 1.
        let x = array![[1.0, 0.0], [-1.0, 0.0]];
        let y = array![[1.0, 0.0], [-1.0, 0.0]];
        let l = softmax_contrastive(x.view(), y.view(), 1.0).unwrap().loss;
        let e = std::f64::consts::E;
        let expected = -(e / (e + 1.0 / e)).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((expected - 0.126_928).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            softmax_contrastive(x.view(), x.view(), 0.0),
            Err(EncoderError::InvalidTemperature(_))
        ));
        let one = array![[1.0, 0.0]];
        assert!(matches!(
            softmax_contrastive(one.view(), one.view(), 1.0),
            Err(EncoderError::BatchTooSmall(1))
        ));
        assert!(matches!(
            ContrastiveBatch::new(array![[2.0, 0.0], [0.0, 1.0]], x.clone(), 1.0),
            Err(EncoderError::NotUnitRow { .. })
        ));
    }

    #[test]
    fn searchsage_sums_tasks() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let y = array![[0.8, 0.6], [0.0, 1.0], [1.0, 0.0]];
        let batch = ContrastiveBatch::new(x, y, 0.5).unwrap();
        let single = softmax_contrastive_loss(&batch).unwrap().loss;
        let mut one = TaskBatchSet::new();
        one.insert(TaskType::QueryPin, batch.clone());
        assert_eq!(searchsage_loss(&one).unwrap().loss, single);
        let mut two = one.clone();
        two.insert(TaskType::QueryBoard, batch.clone());
        assert!((searchsage_loss(&two).unwrap().loss - 2.0 * single).abs() < 1e-15);
        assert!(matches!(searchsage_loss(&TaskBatchSet::new()), Err(EncoderError::EmptyTaskSet)));

        let both = pinclip_loss(&batch, &batch).unwrap();
        assert!((both.loss - 2.0 * single).abs() < 1e-15);
    }
}
