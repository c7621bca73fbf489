//! Cross-surface consistency: decision agreement on equivalent request pairs,
//! weighted by the semantic similarity of the pair's texts.

use crate::config::EvalConfig;
use crate::error::{EvalError, Result};
use crate::model::{clamp_unit, RequestPair};
use crate::numerics::cosine_similarity;

/// Text embedding backend. Implementations must be deterministic per text,
/// return vectors of `dimension()` entries and never return the zero vector
/// for non-empty text.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> std::result::Result<Vec<f64>, String>;
}

/// Token-hash bag-of-words embedder.
///
/// Lowercased alphanumeric tokens are hashed (FNV-1a, 64-bit) into a fixed
/// number of slots and the count vector is L2-normalised. Texts without any
/// alphanumeric token hash as a single token.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl EmbeddingProvider for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> std::result::Result<Vec<f64>, String> {
        if text.is_empty() {
            return Err("cannot embed empty text".into());
        }
        let lowered = text.to_lowercase();
        let mut tokens: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(&lowered);
        }
        let mut v = vec![0.0; self.dimension];
        for t in tokens {
            v[(fnv1a(t.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

/// Fraction of pairs whose two decisions carry the same label.
pub fn agreement_rate(pairs: &[RequestPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(EvalError::undefined("agreement rate of an empty pair set"));
    }
    let agree = pairs
        .iter()
        .filter(|p| p.decision_a == p.decision_b)
        .count();
    Ok(agree as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyResult {
    pub agreement_rate: f64,
    pub mean_similarity: f64,
    /// `agreement_rate * mean_similarity`, clamped into [0, 1].
    pub score: f64,
    /// Agreement rate fell below `theta_ar`.
    pub flagged: bool,
    pub pair_count: usize,
}

pub fn consistency_score(
    pairs: &[RequestPair],
    provider: &dyn EmbeddingProvider,
    config: &EvalConfig,
) -> Result<ConsistencyResult> {
    let ar = agreement_rate(pairs)?;
    let dim = provider.dimension();
    let embed = |pair: usize, text: &str| -> Result<Vec<f64>> {
        let v = provider
            .embed(text)
            .map_err(|message| EvalError::Provider { pair, message })?;
        if v.len() != dim {
            return Err(EvalError::Provider {
                pair,
                message: format!("embedding has {} entries, provider declared {dim}", v.len()),
            });
        }
        Ok(v)
    };

    let mut sims = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        p.validate()?;
        let a = embed(i, &p.text_a)?;
        let b = embed(i, &p.text_b)?;
        sims.push(cosine_similarity(&a, &b).map_err(|e| EvalError::Provider {
            pair: i,
            message: e.to_string(),
        })?);
    }
    // summing in sorted order makes the mean independent of pair order
    sims.sort_by(f64::total_cmp);
    let mean_similarity = sims.iter().sum::<f64>() / sims.len() as f64;

    Ok(ConsistencyResult {
        agreement_rate: ar,
        mean_similarity,
        score: clamp_unit(ar * mean_similarity),
        flagged: ar < config.theta_ar,
        pair_count: pairs.len(),
    })
}
