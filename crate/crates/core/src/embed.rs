//! Block and query embedders.
//!
//! The engine never runs a language model itself. An [`Embedder`] turns
//! already-formatted inputs (`"passage: ...</s>"`, `"query: ...</s>"`) into
//! vectors; [`HashEmbedder`] is a deterministic stand-in for tests and desk
//! experiments and [`ServiceEmbedder`] talks to a remote embedding service.

use std::hint::black_box;
use std::ops::Deref;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::{tokenize, truncate_tokens};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_SEED: u64 = 0x5eed_b10c_2024_0001;
pub const DEFAULT_TERMINATOR: &str = "</s>";
pub const MAX_QUERY_TOKENS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Passage,
    Query,
}

impl EmbedderKind {
    pub fn prefix(self) -> &'static str {
        match self {
            EmbedderKind::Passage => "passage: ",
            EmbedderKind::Query => "query: ",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmbedderKind::Passage => "passage",
            EmbedderKind::Query => "query",
        }
    }
}

/// A dense vector produced by an embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Representation(pub Vec<f32>);

impl Representation {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

impl Deref for Representation {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl From<Vec<f32>> for Representation {
    fn from(v: Vec<f32>) -> Self {
        Representation(v)
    }
}

/// Input template: `"<kind>: " + body + terminator`, with query bodies capped
/// at `max_query_tokens` engine tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputFormat {
    pub terminator: String,
    pub max_query_tokens: usize,
}

impl Default for InputFormat {
    fn default() -> Self {
        Self {
            terminator: DEFAULT_TERMINATOR.to_string(),
            max_query_tokens: MAX_QUERY_TOKENS,
        }
    }
}

impl InputFormat {
    pub fn format(&self, text: &str, kind: EmbedderKind) -> String {
        let body = match kind {
            EmbedderKind::Passage => text,
            EmbedderKind::Query => truncate_tokens(text, self.max_query_tokens),
        };
        format!("{}{}{}", kind.prefix(), body, self.terminator)
    }
}

/// Format with the default `</s>` terminator and 32-token query cap.
pub fn format_input(text: &str, kind: EmbedderKind) -> String {
    InputFormat::default().format(text, kind)
}

/// Modeled cost of encoding `token_count` tokens in one pass (attention is
/// quadratic in sequence length).
pub fn embedding_cost(token_count: u64) -> u64 {
    token_count * token_count
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embed formatted inputs, one vector per input in input order.
    fn embed(&self, inputs: &[String], kind: EmbedderKind) -> Result<Vec<Representation>>;

    fn embed_one(&self, input: &str, kind: EmbedderKind) -> Result<Representation> {
        let mut out = self.embed(&[input.to_string()], kind)?;
        out.pop()
            .ok_or_else(|| Error::InvalidResponse("embedder returned no vector".into()))
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, inputs: &[String], kind: EmbedderKind) -> Result<Vec<Representation>> {
        (**self).embed(inputs, kind)
    }
}

/// Deterministic bag-of-tokens embedder.
///
/// Every token string maps to a fixed pseudo-random vector in `[-1, 1]^D`
/// (ChaCha8 keyed by the seed and the token's FNV-1a hash); a text's embedding
/// is the L2-normalised sum of its token vectors, including the kind prefix
/// and terminator tokens.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    format: InputFormat,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self::with_format(dim, seed, InputFormat::default())
    }

    pub fn with_format(dim: usize, seed: u64, format: InputFormat) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed, format }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Token strings fed into the bag for one formatted input.
    pub fn input_tokens(&self, input: &str, kind: EmbedderKind) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut body = input;
        if let Some(rest) = body.strip_prefix(kind.prefix()) {
            tokens.push(kind.prefix().trim_end().to_string());
            body = rest;
        }
        let mut terminated = false;
        if !self.format.terminator.is_empty() {
            if let Some(rest) = body.strip_suffix(self.format.terminator.as_str()) {
                body = rest;
                terminated = true;
            }
        }
        tokens.extend(tokenize(body).tokens.into_iter().map(|t| t.text));
        if terminated {
            tokens.push(self.format.terminator.clone());
        }
        tokens
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.seed, token.as_bytes()));
        (0..self.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    }

    fn embed_tokens(&self, tokens: &[String]) -> Representation {
        let mut acc = vec![0.0f64; self.dim];
        for t in tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += v;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for a in &mut acc {
                *a /= norm;
            }
        }
        Representation(acc.into_iter().map(|v| v as f32).collect())
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, inputs: &[String], kind: EmbedderKind) -> Result<Vec<Representation>> {
        Ok(inputs
            .iter()
            .map(|s| self.embed_tokens(&self.input_tokens(s, kind)))
            .collect())
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// [`HashEmbedder`] that also burns work quadratic in the input's token count,
/// mimicking the cost profile of full self-attention. Output vectors are
/// identical to the wrapped embedder's.
#[derive(Debug, Clone)]
pub struct QuadraticCostEmbedder {
    inner: HashEmbedder,
}

impl QuadraticCostEmbedder {
    pub fn new(inner: HashEmbedder) -> Self {
        Self { inner }
    }
}

impl Embedder for QuadraticCostEmbedder {
    fn dim(&self) -> usize {
        self.inner.dim
    }

    fn embed(&self, inputs: &[String], kind: EmbedderKind) -> Result<Vec<Representation>> {
        let mut out = Vec::with_capacity(inputs.len());
        for s in inputs {
            let tokens = self.inner.input_tokens(s, kind);
            let hashes: Vec<u64> = tokens
                .iter()
                .map(|t| fnv1a(self.inner.seed, t.as_bytes()))
                .collect();
            let mut acc = 0u64;
            for &a in &hashes {
                for &b in &hashes {
                    acc = acc.rotate_left(5) ^ a.wrapping_mul(b | 1);
                }
            }
            black_box(acc);
            out.push(self.inner.embed_tokens(&tokens));
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    kind: EmbedderKind,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

#[derive(Deserialize)]
struct HealthResponse {
    status: String,
    dim: usize,
}

/// Client for the remote embedding service (`POST /embed`, `GET /health`).
#[derive(Debug, Clone)]
pub struct ServiceEmbedder {
    base_url: String,
    dim: usize,
    batch_size: usize,
    attempts: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

impl ServiceEmbedder {
    pub fn new(base_url: impl Into<String>, dim: usize) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(Duration::from_secs(300))
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            dim,
            batch_size: 32,
            attempts: 3,
            backoff: Duration::from_millis(200),
            agent,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn with_retry(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Query `/health` and return the service's reported dimension.
    pub fn health(&self) -> Result<usize> {
        let url = format!("{}/health", self.base_url);
        let resp = self.with_retries(|| self.agent.get(&url).call().map_err(Box::new))?;
        let health: HealthResponse = resp
            .into_json()
            .map_err(|e| Error::InvalidResponse(format!("health body: {e}")))?;
        if health.status != "ok" {
            return Err(Error::ServiceUnavailable(format!(
                "status {:?}",
                health.status
            )));
        }
        if health.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: health.dim,
            });
        }
        Ok(health.dim)
    }

    fn with_retries<F>(&self, mut call: F) -> Result<ureq::Response>
    where
        F: FnMut() -> std::result::Result<ureq::Response, Box<ureq::Error>>,
    {
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match call().map_err(|e| *e) {
                Ok(r) => return Ok(r),
                Err(ureq::Error::Status(code, resp)) if code >= 500 => {
                    last = format!("status {code}: {}", resp.into_string().unwrap_or_default());
                }
                Err(ureq::Error::Status(code, resp)) => {
                    return Err(Error::InvalidResponse(format!(
                        "status {code}: {}",
                        resp.into_string().unwrap_or_default()
                    )));
                }
                Err(e) => last = e.to_string(),
            }
            log::debug!("embedding request attempt {} failed: {last}", attempt + 1);
        }
        Err(Error::ServiceUnavailable(format!(
            "{} after {} attempts: {last}",
            self.base_url, self.attempts
        )))
    }

    fn embed_batch(&self, texts: &[String], kind: EmbedderKind) -> Result<Vec<Representation>> {
        let url = format!("{}/embed", self.base_url);
        let body = EmbedRequest { texts, kind };
        let result = self.with_retries(|| self.agent.post(&url).send_json(&body).map_err(Box::new));
        let resp = match result {
            Err(Error::InvalidResponse(msg))
                if msg.starts_with("status 413") && texts.len() > 1 =>
            {
                // Batch too large for the service: split and retry.
                let mid = texts.len() / 2;
                let mut left = self.embed_batch(&texts[..mid], kind)?;
                left.extend(self.embed_batch(&texts[mid..], kind)?);
                return Ok(left);
            }
            other => other?,
        };
        let parsed: EmbedResponse = resp
            .into_json()
            .map_err(|e| Error::InvalidResponse(format!("embed body: {e}")))?;
        if parsed.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: parsed.dim,
            });
        }
        if parsed.vectors.len() != texts.len() {
            return Err(Error::InvalidResponse(format!(
                "expected {} vectors, got {}",
                texts.len(),
                parsed.vectors.len()
            )));
        }
        parsed
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        actual: v.len(),
                    });
                }
                let r = Representation(v);
                if !r.is_finite() {
                    return Err(Error::InvalidResponse("non-finite vector entry".into()));
                }
                Ok(r)
            })
            .collect()
    }
}

impl Embedder for ServiceEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, inputs: &[String], kind: EmbedderKind) -> Result<Vec<Representation>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.batch_size) {
            out.extend(self.embed_batch(chunk, kind)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::cosine;

    fn passages(texts: &[&str]) -> Vec<String> {
        texts
            .iter()
            .map(|t| format_input(t, EmbedderKind::Passage))
            .collect()
    }

    #[test]
    fn formatting() {
        assert_eq!(
            format_input("dog", EmbedderKind::Passage),
            "passage: dog</s>"
        );
        assert_eq!(format_input("", EmbedderKind::Query), "query: </s>");
        let long: Vec<String> = (0..35).map(|i| format!("w{i}")).collect();
        let formatted = format_input(&long.join(" "), EmbedderKind::Query);
        let body = formatted
            .strip_prefix("query: ")
            .and_then(|s| s.strip_suffix("</s>"))
            .unwrap();
        assert_eq!(body, long[..32].join(" "));
    }

    #[test]
    fn custom_terminator() {
        let f = InputFormat {
            terminator: "<eos>".into(),
            max_query_tokens: 2,
        };
        assert_eq!(f.format("a b c", EmbedderKind::Query), "query: a b<eos>");
    }

    #[test]
    fn hash_embedder_deterministic_and_normalised() {
        let e = HashEmbedder::new(64, DEFAULT_SEED);
        let v = e
            .embed(
                &passages(&["the cat sat", "the cat sat"]),
                EmbedderKind::Passage,
            )
            .unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].dim(), 64);
        assert!(v[0].is_finite() && !v[0].is_zero());
        assert!((cosine(&v[0], &v[0]).unwrap() - 1.0).abs() < 1e-6);
        let e2 = HashEmbedder::new(64, DEFAULT_SEED);
        assert_eq!(
            e2.embed(&passages(&["the cat sat"]), EmbedderKind::Passage)
                .unwrap()[0],
            v[0]
        );
    }

    #[test]
    fn no_cross_batch_state() {
        let e = HashEmbedder::new(32, 7);
        let alone = e
            .embed(&passages(&["x y z"]), EmbedderKind::Passage)
            .unwrap();
        let batch = e
            .embed(&passages(&["a", "x y z", "b c"]), EmbedderKind::Passage)
            .unwrap();
        assert_eq!(alone[0], batch[1]);
    }

    #[test]
    fn prefix_and_terminator_are_tokens() {
        let e = HashEmbedder::new(8, 1);
        assert_eq!(
            e.input_tokens("passage: a b.</s>", EmbedderKind::Passage),
            vec!["passage:", "a", "b", ".", "</s>"]
        );
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        use rand::seq::SliceRandom;
        let e = HashEmbedder::new(64, DEFAULT_SEED);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vocab: Vec<String> = (0..400).map(|i| format!("tok{i}")).collect();
        for _ in 0..50 {
            let words: Vec<&String> = vocab.choose_multiple(&mut rng, 30).collect();
            let base: Vec<&str> = words[..10].iter().map(|s| s.as_str()).collect();
            let mut shared = base[..8].to_vec();
            shared.extend(words[10..12].iter().map(|s| s.as_str()));
            let disjoint: Vec<&str> = words[20..30].iter().map(|s| s.as_str()).collect();
            let v = e
                .embed(
                    &passages(&[&base.join(" "), &shared.join(" "), &disjoint.join(" ")]),
                    EmbedderKind::Passage,
                )
                .unwrap();
            assert!(cosine(&v[0], &v[1]).unwrap() > cosine(&v[0], &v[2]).unwrap());
        }
    }

    #[test]
    fn quadratic_embedder_matches_inner() {
        let inner = HashEmbedder::new(16, 9);
        let q = QuadraticCostEmbedder::new(inner.clone());
        let input = passages(&["some words here."]);
        assert_eq!(
            q.embed(&input, EmbedderKind::Passage).unwrap(),
            inner.embed(&input, EmbedderKind::Passage).unwrap()
        );
    }

    #[test]
    fn cost_model() {
        assert_eq!(embedding_cost(63), 3969);
        assert_eq!(embedding_cost(0), 0);
        assert_eq!(20 * embedding_cost(63), 79_380);
        assert_eq!(embedding_cost(1260), 1_587_600);
        assert_eq!(embedding_cost(1260), 20 * 20 * embedding_cost(63));
    }

    proptest::proptest! {
        #[test]
        fn cost_is_subadditive(parts in proptest::collection::vec(1u64..500, 2..20)) {
            let total: u64 = parts.iter().sum();
            let blockwise: u64 = parts.iter().map(|&p| embedding_cost(p)).sum();
            proptest::prop_assert!(blockwise < embedding_cost(total));
        }
    }
}
