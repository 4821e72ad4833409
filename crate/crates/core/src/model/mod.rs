//! Domain records, corpus IO, seeding, and vector math shared by every stage.

pub mod corpus;
pub mod records;
pub mod seed;
pub mod text;
pub mod vector;

pub use corpus::{load_corpus, save_corpus, Corpus, CorpusError, CorpusManifest, Dims};
pub use records::{
    EngagementRecord, Label, LabeledPair, PairSource, PinRecord, QueryCategory, QueryRecord,
    Signature,
};
pub use text::HashingEmbedder;
pub use vector::{cosine, l2_normalize, DenseVector, VectorError};
