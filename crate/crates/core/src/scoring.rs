//! Query-block scoring and top-k weighted aggregation.
//!
//! A block scores `cos(q, b) / temperature`; a document scores the dot
//! product of its `k` best block scores (sorted descending) with the weight
//! vector. Documents with fewer than `k` blocks use the leading weights only.

use std::cmp::Ordering;

use serde::Serialize;

use crate::embed::{Embedder, EmbedderKind, InputFormat};
use crate::error::{Error, Result};
use crate::par::Pool;
use crate::store::{Store, StoredDocument};
use crate::train::ProjectionHead;

pub const DEFAULT_TEMPERATURE: f64 = 0.01;
pub const DEFAULT_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Temperature-scaled cosine similarity.
pub fn block_score(query: &[f32], block: &[f32], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature {temperature} must be positive"
        )));
    }
    Ok(cosine(query, block)? / temperature)
}

/// Aggregation weights `w_1..w_k`, all nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    /// Nonnegative, non-increasing weights.
    pub fn descending(weights: Vec<f64>) -> Result<Self> {
        let w = Self::unconstrained(weights)?;
        if w.weights.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::InvalidArgument(format!(
                "weights {:?} must be non-increasing",
                w.weights
            )));
        }
        Ok(w)
    }

    /// Nonnegative weights in any order (learned weights drop the ordering).
    pub fn unconstrained(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument(
                "weight vector must not be empty".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "weights {weights:?} must be finite and nonnegative"
            )));
        }
        Ok(Self { weights })
    }

    /// `k` equal weights of `1/k`.
    pub fn average(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        Ok(Self {
            weights: vec![1.0 / k as f64; k],
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }
}

impl Default for WeightVector {
    fn default() -> Self {
        Self {
            weights: DEFAULT_WEIGHTS.to_vec(),
        }
    }
}

/// Block ordinals sorted by score descending, lower ordinal first on ties.
pub fn rank_blocks(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn aggregate(block_scores: &[f64], weights: &WeightVector) -> Result<f64> {
    if block_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    Ok(rank_blocks(block_scores)
        .into_iter()
        .zip(weights.as_slice())
        .map(|(i, w)| w * block_scores[i])
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringConfig {
    pub weights: WeightVector,
    pub temperature: f64,
    /// Only the first `n` stored blocks take part in scoring when set.
    pub max_blocks: Option<usize>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            weights: WeightVector::default(),
            temperature: DEFAULT_TEMPERATURE,
            max_blocks: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreStatus {
    Scored,
    /// Document present but has no stored blocks.
    NoBlocks,
    /// Document absent from the store.
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredDocument {
    pub doc_id: String,
    pub score: f64,
    pub top_block_indices: Vec<usize>,
    pub block_scores: Vec<f64>,
    pub status: ScoreStatus,
}

impl ScoredDocument {
    fn unscored(doc_id: &str, status: ScoreStatus) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            score: f64::NEG_INFINITY,
            top_block_indices: Vec::new(),
            block_scores: Vec::new(),
            status,
        }
    }
}

/// Score one stored document against a query vector.
pub fn score_document(
    query: &[f32],
    doc: &StoredDocument,
    config: &ScoringConfig,
) -> Result<ScoredDocument> {
    let limit = config
        .max_blocks
        .unwrap_or(usize::MAX)
        .min(doc.block_vectors.len());
    if limit == 0 {
        return Err(Error::NoBlocks(doc.doc_id.clone()));
    }
    let scores = doc.block_vectors[..limit]
        .iter()
        .map(|b| block_score(query, b, config.temperature))
        .collect::<Result<Vec<f64>>>()?;
    let top: Vec<usize> = rank_blocks(&scores)
        .into_iter()
        .take(config.weights.k())
        .collect();
    let block_scores: Vec<f64> = top.iter().map(|&i| scores[i]).collect();
    let score = block_scores
        .iter()
        .zip(config.weights.as_slice())
        .map(|(s, w)| s * w)
        .sum();
    Ok(ScoredDocument {
        doc_id: doc.doc_id.clone(),
        score,
        top_block_indices: top,
        block_scores,
        status: ScoreStatus::Scored,
    })
}

/// Final ordering: scored documents by score descending then doc id
/// ascending, then zero-block documents, then documents missing from the
/// store, both in input order.
pub fn order_results(results: &mut [ScoredDocument]) {
    fn tier(s: ScoreStatus) -> u8 {
        match s {
            ScoreStatus::Scored => 0,
            ScoreStatus::NoBlocks => 1,
            ScoreStatus::Missing => 2,
        }
    }
    results.sort_by(|a, b| {
        tier(a.status).cmp(&tier(b.status)).then_with(|| {
            if a.status == ScoreStatus::Scored {
                b.score
                    .total_cmp(&a.score)
                    .then_with(|| a.doc_id.cmp(&b.doc_id))
            } else {
                Ordering::Equal
            }
        })
    });
}

/// Reranks candidate lists against a precomputed store.
pub struct Reranker<'a> {
    pub store: &'a Store,
    pub embedder: &'a dyn Embedder,
    pub config: ScoringConfig,
    pub format: InputFormat,
    pub head: Option<&'a ProjectionHead>,
    pub pool: Pool,
}

impl<'a> Reranker<'a> {
    pub fn new(store: &'a Store, embedder: &'a dyn Embedder, config: ScoringConfig) -> Self {
        Self {
            store,
            embedder,
            config,
            format: InputFormat::default(),
            head: None,
            pool: Pool::default(),
        }
    }

    pub fn with_head(mut self, head: Option<&'a ProjectionHead>) -> Self {
        self.head = head;
        self
    }

    pub fn with_pool(mut self, pool: Pool) -> Self {
        self.pool = pool;
        self
    }

    pub fn with_format(mut self, format: InputFormat) -> Self {
        self.format = format;
        self
    }

    pub fn embed_query(&self, query: &str) -> Result<Vec<f32>> {
        let input = self.format.format(query, EmbedderKind::Query);
        let v = self.embedder.embed_one(&input, EmbedderKind::Query)?;
        if v.dim() != self.store.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.store.dim(),
                actual: v.dim(),
            });
        }
        Ok(match self.head {
            Some(h) => h.project(&v)?,
            None => v.0,
        })
    }

    pub fn rerank(&self, query: &str, candidates: &[String]) -> Result<Vec<ScoredDocument>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let qv = self.embed_query(query)?;
        self.rerank_vector(&qv, candidates)
    }

    /// Rerank with an already embedded (and projected) query vector.
    pub fn rerank_vector(
        &self,
        query: &[f32],
        candidates: &[String],
    ) -> Result<Vec<ScoredDocument>> {
        let mut seen = std::collections::HashSet::new();
        let unique: Vec<&String> = candidates
            .iter()
            .filter(|c| seen.insert(c.as_str()))
            .collect();
        let scored = self.pool.map(&unique, |id| self.score_candidate(query, id));
        let mut results = scored.into_iter().collect::<Result<Vec<_>>>()?;
        order_results(&mut results);
        Ok(results)
    }

    fn score_candidate(&self, query: &[f32], doc_id: &str) -> Result<ScoredDocument> {
        let Some(mut doc) = self.store.get(doc_id) else {
            return Ok(ScoredDocument::unscored(doc_id, ScoreStatus::Missing));
        };
        if let Some(h) = self.head {
            for v in &mut doc.block_vectors {
                v.0 = h.project(v)?;
            }
        }
        match score_document(query, &doc, &self.config) {
            Err(Error::NoBlocks(_)) => Ok(ScoredDocument::unscored(doc_id, ScoreStatus::NoBlocks)),
            other => other,
        }
    }
}

/// Rerank `candidates` for `query` with default formatting and no projection.
pub fn rerank(
    query: &str,
    candidates: &[String],
    store: &Store,
    embedder: &dyn Embedder,
    config: &ScoringConfig,
) -> Result<Vec<ScoredDocument>> {
    Reranker::new(store, embedder, config.clone()).rerank(query, candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Representation;

    fn doc(id: &str, blocks: Vec<Vec<f32>>) -> StoredDocument {
        StoredDocument {
            doc_id: id.into(),
            block_vectors: blocks.into_iter().map(Representation).collect(),
        }
    }

    #[test]
    fn block_score_examples() {
        let v = [0.3f32, -1.2, 2.0];
        assert!((block_score(&v, &v, 0.01).unwrap() - 100.0).abs() < 1e-4);
        assert!(block_score(&[1.0, 0.0], &[0.0, 2.0], 0.01).unwrap().abs() < 1e-6);
        let w = [1.0f32, 0.5, -0.25];
        let v5: Vec<f32> = v.iter().map(|x| x * 5.0).collect();
        let a = block_score(&v, &w, 0.01).unwrap();
        let b = block_score(&v5, &w, 0.01).unwrap();
        assert!((a - b).abs() < 1e-5);
    }

    #[test]
    fn block_score_errors() {
        assert!(matches!(
            block_score(&[0.0, 0.0], &[1.0, 0.0], 0.01),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            block_score(&[1.0], &[1.0, 0.0], 0.01),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(block_score(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let w = WeightVector::default();
        assert_eq!(aggregate(&[100.0, 80.0, 60.0, 40.0], &w).unwrap(), 86.0);
        assert_eq!(aggregate(&[40.0, 100.0, 60.0, 80.0], &w).unwrap(), 86.0);
        assert_eq!(aggregate(&[7.0], &w).unwrap(), 3.5);
        assert!(matches!(aggregate(&[], &w), Err(Error::EmptyScores)));
    }

    #[test]
    fn weight_validation() {
        assert!(WeightVector::descending(vec![0.2, 0.5]).is_err());
        assert!(WeightVector::descending(vec![]).is_err());
        assert!(WeightVector::unconstrained(vec![0.2, -0.1]).is_err());
        assert!(WeightVector::unconstrained(vec![0.2, 0.5]).is_ok());
        assert_eq!(
            WeightVector::average(3).unwrap().as_slice(),
            &[1.0 / 3.0; 3]
        );
    }

    #[test]
    fn short_document_uses_leading_weights() {
        let q = vec![1.0f32, 0.0];
        let d = doc("d", vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
        let s = score_document(&q, &d, &ScoringConfig::default()).unwrap();
        let c = std::f64::consts::FRAC_1_SQRT_2 * 100.0;
        assert!((s.score - (0.5 * 100.0 + 0.3 * c)).abs() < 1e-9);
        assert_eq!(s.top_block_indices, vec![0, 1]);
    }

    #[test]
    fn no_blocks() {
        let d = doc("d", vec![]);
        assert!(matches!(
            score_document(&[1.0], &d, &ScoringConfig::default()),
            Err(Error::NoBlocks(_))
        ));
    }

    #[test]
    fn tie_prefers_lower_ordinal() {
        let d = doc("d", vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
        let cfg = ScoringConfig {
            weights: WeightVector::descending(vec![1.0]).unwrap(),
            ..Default::default()
        };
        let s = score_document(&[1.0, 0.0], &d, &cfg).unwrap();
        assert_eq!(s.top_block_indices, vec![1]);
    }

    #[test]
    fn inference_block_limit() {
        let q = vec![1.0f32, 0.0, 0.0];
        let mut blocks: Vec<Vec<f32>> = (0..20).map(|_| vec![0.1, 1.0, 0.3]).collect();
        blocks[17] = vec![1.0, 0.0, 0.0];
        let late = doc("late", blocks.clone());
        let cfg15 = ScoringConfig {
            max_blocks: Some(15),
            ..Default::default()
        };
        let cfg20 = ScoringConfig {
            max_blocks: Some(20),
            ..Default::default()
        };
        let a = score_document(&q, &late, &cfg15).unwrap().score;
        let b = score_document(&q, &late, &cfg20).unwrap().score;
        assert!(b > a);
        blocks.swap(3, 17);
        let early = doc("early", blocks);
        let a = score_document(&q, &early, &cfg15).unwrap();
        let b = score_document(&q, &early, &cfg20).unwrap();
        assert_eq!(a.score, b.score);
        assert_eq!(a.top_block_indices[0], 3);
    }

    #[test]
    fn ordering_rules() {
        let mk = |id: &str, score: f64, status| ScoredDocument {
            doc_id: id.into(),
            score,
            top_block_indices: vec![],
            block_scores: vec![],
            status,
        };
        let mut r = vec![
            mk("m1", f64::NEG_INFINITY, ScoreStatus::Missing),
            mk("b", 5.0, ScoreStatus::Scored),
            mk("z", f64::NEG_INFINITY, ScoreStatus::NoBlocks),
            mk("a", 5.0, ScoreStatus::Scored),
            mk("m0", f64::NEG_INFINITY, ScoreStatus::Missing),
            mk("c", 9.0, ScoreStatus::Scored),
        ];
        order_results(&mut r);
        let ids: Vec<_> = r.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b", "z", "m1", "m0"]);
    }
}
