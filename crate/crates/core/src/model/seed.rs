use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed offsets that derive per-stage seeds from the corpus-wide seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Corpus = 0,
    Curation = 101,
    Encoder = 202,
    Index = 303,
    Ranker = 404,
    Collections = 505,
    Agent = 606,
    Eval = 707,
}

pub fn sub_seed(seed: u64, stage: Stage) -> u64 {
    seed.wrapping_add(stage as u64)
}

/// The one RNG used throughout; ChaCha8 has a stable, platform-independent stream.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    rng(sub_seed(seed, stage))
}
