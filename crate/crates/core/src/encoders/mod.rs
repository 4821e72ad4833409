//! Small MLP encoders trained with temperature-softmax contrastive objectives.

mod loss;
mod models;
mod train;

pub use loss::{
    pinclip_loss, searchsage_loss, softmax_contrastive, softmax_contrastive_loss, ContrastiveBatch, LossGrad,
    PinClipLoss, SearchSageLoss, TaskBatchSet, TaskType,
};
pub use models::{
    EncoderBundle, EncoderModel, LossKind, PinClipInputs, PinClipModel, SearchSageInputs, SearchSageModel,
};
pub use train::{
    board_pairs, engagement_pairs, train_encoder, train_pinclip, train_searchsage, EncoderConfig, LogRow,
    TrainedEncoder, TrainingLog,
};

use thiserror::Error;

use crate::nn::checkpoint::CheckpointError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("anchors {anchors:?} and positives {positives:?} differ in shape")]
    ShapeMismatch {
        anchors: (usize, usize),
        positives: (usize, usize),
    },
    #[error("batch of {0} rows has no in-batch negatives")]
    BatchTooSmall(usize),
    #[error("{matrix} row {row} has norm {norm}, expected 1")]
    NotUnitRow { matrix: &'static str, row: usize, norm: f64 },
    #[error("task set is empty")]
    EmptyTaskSet,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("loss became NaN at step {step}; parameter norms {param_norms:?}")]
    NanLoss { step: usize, param_norms: Vec<f64> },
    #[error("not enough training pairs: {0}")]
    NoPairs(String),
    #[error("input dim {actual} does not match encoder input {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("encoder output has zero norm")]
    ZeroNorm,
    #[error("encoder produced non-finite activations")]
    NonFinite,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<NnError> for EncoderError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::DimMismatch { expected, actual } => EncoderError::DimMismatch { expected, actual },
            NnError::ZeroNorm { .. } => EncoderError::ZeroNorm,
            NnError::NonFinite => EncoderError::NonFinite,
        }
    }
}
