//! Frozen hash embeddings and the cosine kernel behind the relevance signal.
//!
//! Each token maps to `dim` pseudo-random reals in `[-1, 1]` derived from
//! `sha256(seed || token)`. Nothing here is learned.

use std::borrow::Cow;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 32;

/// Deterministic vector for `token` under `seed`.
pub fn hash_vector(seed: u64, token: &str, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    tokens: HashMap<String, Vec<f64>>,
    items: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be positive"));
        }
        Ok(Self {
            dim,
            seed,
            tokens: HashMap::new(),
            items: Vec::new(),
        })
    }

    /// Precomputes vectors for a known vocabulary. Tokens outside it are still
    /// embedded on demand with the same hash.
    pub fn with_vocabulary<'a>(mut self, vocab: impl IntoIterator<Item = &'a str>) -> Self {
        for tok in vocab {
            if !self.tokens.contains_key(tok) {
                let v = hash_vector(self.seed, tok, self.dim);
                self.tokens.insert(tok.to_string(), v);
            }
        }
        self
    }

    /// Registers item vectors; `embedding_id` indexes the given order.
    pub fn with_items<'a>(mut self, titles: impl IntoIterator<Item = &'a [String]>) -> Result<Self> {
        let mut items = Vec::new();
        for title in titles {
            items.push(embed_tokens(title, &self)?);
        }
        self.items = items;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn token_vector(&self, token: &str) -> Cow<'_, [f64]> {
        match self.tokens.get(token) {
            Some(v) => Cow::Borrowed(v.as_slice()),
            None => Cow::Owned(hash_vector(self.seed, token, self.dim)),
        }
    }

    pub fn item_vector(&self, embedding_id: usize) -> Result<&[f64]> {
        self.items
            .get(embedding_id)
            .map(Vec::as_slice)
            .ok_or(Error::OutOfRange {
                what: "embedding id",
                index: embedding_id,
                limit: self.items.len(),
            })
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }
}

/// Mean of the per-token hash vectors.
pub fn embed_tokens<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("token sequence"));
    }
    let mut acc = vec![0.0; table.dim()];
    for tok in tokens {
        let v = table.token_vector(tok.as_ref());
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]` after rounding.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(DEFAULT_DIM, 11).unwrap()
    }

    #[test]
    fn single_token_is_its_hash_vector() {
        let t = table();
        let v = embed_tokens(&["solar"], &t).unwrap();
        assert_eq!(v, hash_vector(11, "solar", DEFAULT_DIM));
        assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn embedding_is_deterministic() {
        let t = table();
        let a = embed_tokens(&["space", "movie"], &t).unwrap();
        let b = embed_tokens(&["space", "movie"], &t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_token_mean_matches_scalar_loop() {
        let t = table();
        let ha = hash_vector(11, "a", DEFAULT_DIM);
        let hb = hash_vector(11, "b", DEFAULT_DIM);
        let got = embed_tokens(&["a", "b"], &t).unwrap();
        for i in 0..DEFAULT_DIM {
            let expect = (ha[i] + hb[i]) / 2.0;
            assert_abs_diff_eq!(got[i], expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn empty_tokens_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            embed_tokens(&empty, &table()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn precomputed_vocabulary_matches_on_demand() {
        let t = table().with_vocabulary(["drift"]);
        assert_eq!(&*t.token_vector("drift"), hash_vector(11, "drift", DEFAULT_DIM).as_slice());
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // long-hand: 1*4 + 2*5 + 3*6 = 32, |u| = sqrt(14), |v| = sqrt(77)
        let dot = 1.0 * 4.0 + 2.0 * 5.0 + 3.0 * 6.0;
        let expect = dot / ((1.0f64 + 4.0 + 9.0).sqrt() * (16.0f64 + 25.0 + 36.0).sqrt());
        let got = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-15);
        assert_abs_diff_eq!(got, 0.974631, epsilon = 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::UndefinedSimilarity)
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hash_embeddings_stable_across_runs_and_vary_across_seeds() {
        let mut differing = 0;
        for i in 0..1000 {
            let tok = format!("tok{i}");
            assert_eq!(hash_vector(5, &tok, 8), hash_vector(5, &tok, 8));
            if hash_vector(5, &tok, 8) != hash_vector(6, &tok, 8) {
                differing += 1;
            }
        }
        assert_eq!(differing, 1000);
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
            .prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_bounded(u in vec_strategy(6), v in vec_strategy(6)) {
            let a = cosine(&u, &v).unwrap();
            let b = cosine(&v, &u).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }

        #[test]
        fn cosine_scale_invariant(u in vec_strategy(5), v in vec_strategy(5), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
            prop_assert!((cosine(&scaled, &v).unwrap() - cosine(&u, &v).unwrap()).abs() < 1e-9);
        }
    }
}
