//! Deterministic hash-projection embedder and vector helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{BackendError, Embedder};
use crate::ids::stable_hash;

pub const DEFAULT_DIMENSION: usize = 64;

/// Bag-of-words embedder: each lowercase alphanumeric token maps to a fixed
/// pseudo-random direction (seeded), the directions are summed and the sum
/// L2-normalized. Texts that share many tokens land close together.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    fn token_direction(&self, token: &str, out: &mut [f64]) {
        let key = stable_hash(&[&self.seed.to_le_bytes(), token.as_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        for v in out.iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION, 0)
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = vec![0.0; self.dimension];
        let mut any = false;
        for t in tokens(text) {
            self.token_direction(&t, &mut v);
            any = true;
        }
        if !any {
            self.token_direction("\u{0}empty", &mut v);
        }
        normalize(&mut v);
        Ok(v)
    }
}

/// Scales `v` to unit length in place. Returns false (leaving `v` alone)
/// for a zero or non-finite vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
