use super::{Embedder, EmbeddingVector};
use crate::error::Result;

pub const DEFAULT_DIM: usize = 384;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Signed feature hashing of character trigrams.
///
/// Text is lowercased and whitespace is dropped before trigrams are taken, so
/// `"2+2"` and `"2 + 2"` embed identically. Non-empty texts shorter than three
/// characters hash as a single gram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn hash(&self, gram: &str) -> u64 {
        let mut h = FNV_OFFSET;
        for b in self.seed.to_le_bytes().iter().chain(gram.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h
    }

    /// Bucket index and sign contributed by one gram.
    pub fn bucket(&self, gram: &str) -> (usize, f64) {
        let h = self.hash(gram);
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    pub fn grams(text: &str) -> Vec<String> {
        let chars: Vec<char> = text
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(char::to_lowercase)
            .collect();
        match chars.len() {
            0 => Vec::new(),
            1..=2 => vec![chars.iter().collect()],
            _ => chars.windows(3).map(|w| w.iter().collect()).collect(),
        }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, 0)
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = vec![0.0; self.dim];
        for gram in Self::grams(text) {
            let (idx, sign) = self.bucket(&gram);
            v[idx] += sign;
        }
        EmbeddingVector::normalized(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_first_basis_vector() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("").unwrap(), EmbeddingVector::basis(DEFAULT_DIM, 0));
        assert_eq!(e.embed("  \t").unwrap(), EmbeddingVector::basis(DEFAULT_DIM, 0));
    }

    #[test]
    fn spacing_does_not_change_the_vector() {
        let e = HashingEmbedder::default();
        let a = e.embed("2+2").unwrap();
        let b = e.embed("2 + 2").unwrap();
        assert!(cosine(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn seed_changes_vectors() {
        let a = HashingEmbedder::new(64, 1).embed("hello world").unwrap();
        let b = HashingEmbedder::new(64, 2).embed("hello world").unwrap();
        assert_ne!(a, b);
    }

    proptest! {
        #[test]
        fn unit_norm_and_deterministic(text in ".{0,80}") {
            let e = HashingEmbedder::new(97, 5);
            let a = e.embed(&text).unwrap();
            let b = e.embed(&text).unwrap();
            prop_assert_eq!(&a, &b);
            let n: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }

        #[test]
        fn cosine_is_bounded_and_symmetric(x in ".{0,40}", y in ".{0,40}") {
            let e = HashingEmbedder::new(32, 0);
            let (a, b) = (e.embed(&x).unwrap(), e.embed(&y).unwrap());
            let c = cosine(&a, &b).unwrap();
            prop_assert!(c.abs() <= 1.0 + 1e-12);
            prop_assert_eq!(c, cosine(&b, &a).unwrap());
        }
    }
}
