//! Fixed-dimension unit vectors for queries, operator profiles and model
//! profiles.

mod hashing;
mod http;
mod profile;

pub use hashing::{HashingEmbedder, DEFAULT_DIM};
pub use http::{HttpEmbedder, HttpEmbedderConfig};
pub use profile::{load_operator_profiles, parse_operator_profiles, OperatorProfile, PROFILE_PROMPT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm};

/// An L2-normalized embedding. The all-zero input direction maps to `e₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalize `values`; a zero (or empty-signal) vector becomes `e₁`.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("embedding dimension must be positive"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding component".into()));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Ok(Self::basis(values.len(), 0));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64> {
        cosine(self, other)
    }
}

/// Inner product of two unit vectors, clamped into `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!(
            "cosine of vectors with dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

/// A text embedding provider. Providers are read-only after construction.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(xs.to_vec()).unwrap()
    }

    #[test]
    fn cosine_basics() {
        let a = v(&[0.6, 0.8]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&a, &v(&[0.8, 0.6])).unwrap() - 0.96).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_dim_mismatch() {
        assert!(matches!(
            cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_vector_becomes_first_basis() {
        assert_eq!(v(&[0.0, 0.0, 0.0]), EmbeddingVector::basis(3, 0));
    }
}
