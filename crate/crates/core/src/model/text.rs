//! Hashed bag-of-tokens text embedding.
//!
//! Each lowercase alphanumeric token is hashed with 64-bit FNV-1a; the low
//! bits pick a coordinate and bit 63 picks the sign. The summed vector is
//! L2-normalized, so texts sharing tokens have positive cosine and texts with
//! disjoint vocabularies are near-orthogonal.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unit-norm embedding, or all zeros when the text has no tokens.
    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for tok in tokenize(text) {
            let h = fnv1a(tok.as_bytes());
            let slot = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[slot] += sign;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dim];
        }
        acc.iter().map(|x| (x / norm) as f32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vector::cosine_slices;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn same_tokens_same_embedding() {
        let e = HashingEmbedder::new(64);
        assert_eq!(e.embed("Sage Green  dress"), e.embed("sage green dress"));
        assert!((cosine_slices(&e.embed("a b"), &e.embed("b a")).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_zero() {
        assert!(HashingEmbedder::new(8).embed(" -- ").iter().all(|&x| x == 0.0));
    }
}
