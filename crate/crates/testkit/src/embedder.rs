use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use zcbm_core::vecstore::{Embedder, EmbeddingMatrix, ProviderError};

pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Maps each text to a Gaussian direction seeded by its hash, unless an
/// explicit vector was registered for it.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    overrides: HashMap<String, Vec<f32>>,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            overrides: HashMap::new(),
        }
    }

    pub fn with(mut self, text: &str, v: Vec<f32>) -> Self {
        assert_eq!(v.len(), self.dim);
        self.overrides.insert(text.to_string(), v);
        self
    }

    pub fn insert(&mut self, text: &str, v: Vec<f32>) {
        assert_eq!(v.len(), self.dim);
        self.overrides.insert(text.to_string(), v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn raw(&self, text: &str) -> Vec<f32> {
        if let Some(v) = self.overrides.get(text) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(text));
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddingMatrix, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let rows: Vec<Vec<f32>> = texts.iter().map(|t| self.raw(t)).collect();
        EmbeddingMatrix::from_rows_normalized(self.dim, &rows)
            .map_err(|e| ProviderError::ProviderBadResponse(e.to_string()))
    }
}
