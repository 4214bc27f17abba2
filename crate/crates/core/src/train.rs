//! Pairwise training of a linear projection head over frozen embeddings.
//!
//! Query and block vectors are projected through the head before scoring, so
//! the document score is a differentiable function of the head (the top-k
//! block selection is held fixed at the forward pass's choice). Updates are
//! plain SGD on gradients averaged over an accumulation window.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embed::{Embedder, EmbedderKind, InputFormat};
use crate::error::{Error, Result};
use crate::par::Pool;
use crate::scoring::{rank_blocks, WeightVector};
use crate::store::Store;

pub const HEAD_MAGIC: &[u8; 8] = b"BREPSPJ1";
pub const DEFAULT_MARGIN: f64 = 10.0;
pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_LEARNING_RATE: f64 = 5e-5;
pub const DEFAULT_ACCUMULATION: usize = 4;

/// Linear map `y = M^T x` with `M` stored row-major as `d_in x d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    d_in: usize,
    d_out: usize,
    matrix: Vec<f64>,
}

impl ProjectionHead {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            d_in: dim,
            d_out: dim,
            matrix,
        }
    }

    /// Identity plus uniform noise in `[-noise, noise]`.
    pub fn near_identity(dim: usize, noise: f64, seed: u64) -> Self {
        let mut head = Self::identity(dim);
        if noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for m in &mut head.matrix {
                *m += rng.gen_range(-noise..=noise);
            }
        }
        head
    }

    pub fn from_matrix(d_in: usize, d_out: usize, matrix: Vec<f64>) -> Result<Self> {
        if d_in == 0 || d_out == 0 || matrix.len() != d_in * d_out {
            return Err(Error::InvalidArgument(format!(
                "matrix of {} entries does not fit {d_in}x{d_out}",
                matrix.len()
            )));
        }
        if matrix.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite projection entry".into()));
        }
        Ok(Self {
            d_in,
            d_out,
            matrix,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut [f64] {
        &mut self.matrix
    }

    pub fn project_f64(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.d_out];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.matrix[i * self.d_out..(i + 1) * self.d_out];
            for (yk, m) in y.iter_mut().zip(row) {
                *yk += xi * m;
            }
        }
        y
    }

    pub fn project(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                actual: x.len(),
            });
        }
        let xf: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        Ok(self
            .project_f64(&xf)
            .into_iter()
            .map(|v| v as f32)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Loss {
    Hinge { margin: f64 },
    RankNet { sigma: f64 },
}

impl Default for Loss {
    fn default() -> Self {
        Loss::Hinge {
            margin: DEFAULT_MARGIN,
        }
    }
}

impl Loss {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Loss::Hinge { margin } if !(margin > 0.0 && margin.is_finite()) => {
                Err(Error::config("training.margin", "must be positive"))
            }
            Loss::RankNet { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::config("training.sigma", "must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, s_pos: f64, s_neg: f64) -> f64 {
        match *self {
            Loss::Hinge { margin } => hinge_loss(s_pos, s_neg, margin),
            Loss::RankNet { sigma } => ranknet_loss(s_pos, s_neg, sigma),
        }
    }

    /// `dL/ds_pos`; `dL/ds_neg` is its negation.
    pub fn d_pos(&self, s_pos: f64, s_neg: f64) -> f64 {
        match *self {
            Loss::Hinge { margin } => {
                if margin - s_pos + s_neg > 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Loss::RankNet { sigma } => -sigma / (1.0 + (sigma * (s_pos - s_neg)).exp()),
        }
    }
}

pub fn hinge_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - s_pos + s_neg).max(0.0)
}

/// `log(1 + exp(-sigma * (s_pos - s_neg)))`, evaluated without overflow.
pub fn ranknet_loss(s_pos: f64, s_neg: f64, sigma: f64) -> f64 {
    let z = -sigma * (s_pos - s_neg);
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// A (query, relevant, non-relevant) training example by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTriplet {
    pub query: String,
    pub positive_doc_id: String,
    pub negative_doc_id: String,
}

/// A triplet with its base vectors looked up.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTriplet {
    pub query: Vec<f64>,
    pub positive: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Look up the triplet's documents in `store` and embed its query text.
pub fn resolve_triplet(
    triplet: &TrainingTriplet,
    store: &Store,
    embedder: &dyn Embedder,
    format: &InputFormat,
) -> Result<ResolvedTriplet> {
    if triplet.positive_doc_id == triplet.negative_doc_id {
        return Err(Error::InvalidTriplet(format!(
            "positive and negative are both {:?}",
            triplet.positive_doc_id
        )));
    }
    let fetch = |id: &str| -> Result<Vec<Vec<f64>>> {
        let doc = store
            .get(id)
            .ok_or_else(|| Error::MissingDocument(id.to_string()))?;
        if doc.block_vectors.is_empty() {
            return Err(Error::NoBlocks(id.to_string()));
        }
        Ok(doc.block_vectors.iter().map(|v| to_f64(v)).collect())
    };
    let positive = fetch(&triplet.positive_doc_id)?;
    let negative = fetch(&triplet.negative_doc_id)?;
    let q = embedder.embed_one(
        &format.format(&triplet.query, EmbedderKind::Query),
        EmbedderKind::Query,
    )?;
    if q.dim() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            actual: q.dim(),
        });
    }
    Ok(ResolvedTriplet {
        query: to_f64(&q),
        positive,
        negative,
    })
}

/// Scoring settings the trainer differentiates through.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringSetup {
    pub weights: Vec<f64>,
    pub temperature: f64,
    pub max_blocks: Option<usize>,
}

impl Default for ScoringSetup {
    fn default() -> Self {
        Self {
            weights: WeightVector::default().into_vec(),
            temperature: crate::scoring::DEFAULT_TEMPERATURE,
            max_blocks: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Forward {
    pub s_pos: f64,
    pub s_neg: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Same layout as [`ProjectionHead::matrix`].
    pub head: Vec<f64>,
    pub weights: Vec<f64>,
}

struct DocPass {
    score: f64,
    /// (block ordinal, weight slot) for every selected block.
    selected: Vec<(usize, usize)>,
    scores: Vec<f64>,
    proj: Vec<Vec<f64>>,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn doc_pass(
    u: &[f64],
    blocks: &[Vec<f64>],
    head: &ProjectionHead,
    setup: &ScoringSetup,
) -> Result<DocPass> {
    let limit = setup.max_blocks.unwrap_or(usize::MAX).min(blocks.len());
    if limit == 0 {
        return Err(Error::NoBlocks(String::new()));
    }
    let nu = l2(u);
    let proj: Vec<Vec<f64>> = blocks[..limit]
        .iter()
        .map(|b| head.project_f64(b))
        .collect();
    let mut scores = Vec::with_capacity(limit);
    for v in &proj {
        let nv = l2(v);
        if nu == 0.0 || nv == 0.0 {
            return Err(Error::ZeroVector);
        }
        scores.push(dot64(u, v) / (nu * nv) / setup.temperature);
    }
    let selected: Vec<(usize, usize)> = rank_blocks(&scores)
        .into_iter()
        .take(setup.weights.len())
        .enumerate()
        .map(|(slot, j)| (j, slot))
        .collect();
    let score = selected
        .iter()
        .map(|&(j, slot)| setup.weights[slot] * scores[j])
        .sum();
    Ok(DocPass {
        score,
        selected,
        scores,
        proj,
    })
}

fn passes(
    ex: &ResolvedTriplet,
    head: &ProjectionHead,
    setup: &ScoringSetup,
) -> Result<(Vec<f64>, DocPass, DocPass)> {
    if ex.query.len() != head.d_in {
        return Err(Error::DimensionMismatch {
            expected: head.d_in,
            actual: ex.query.len(),
        });
    }
    let u = head.project_f64(&ex.query);
    let pos = doc_pass(&u, &ex.positive, head, setup)?;
    let neg = doc_pass(&u, &ex.negative, head, setup)?;
    Ok((u, pos, neg))
}

pub fn triplet_forward(
    ex: &ResolvedTriplet,
    head: &ProjectionHead,
    setup: &ScoringSetup,
    loss: &Loss,
) -> Result<Forward> {
    let (_, pos, neg) = passes(ex, head, setup)?;
    Ok(Forward {
        s_pos: pos.score,
        s_neg: neg.score,
        loss: loss.value(pos.score, neg.score),
    })
}

/// Analytic gradient of the loss with respect to the head and the weights.
pub fn gradient(
    ex: &ResolvedTriplet,
    head: &ProjectionHead,
    setup: &ScoringSetup,
    loss: &Loss,
) -> Result<(Forward, Gradient)> {
    let (u, pos, neg) = passes(ex, head, setup)?;
    let g_pos = loss.d_pos(pos.score, neg.score);
    let fwd = Forward {
        s_pos: pos.score,
        s_neg: neg.score,
        loss: loss.value(pos.score, neg.score),
    };

    let (d_in, d_out) = (head.d_in, head.d_out);
    let mut g_head = vec![0.0; d_in * d_out];
    let mut g_weights = vec![0.0; setup.weights.len()];
    let mut g_u = vec![0.0; d_out];
    let nu = l2(&u);

    for (pass, blocks, g_doc) in [(&pos, &ex.positive, g_pos), (&neg, &ex.negative, -g_pos)] {
        if g_doc == 0.0 {
            continue;
        }
        for &(j, slot) in &pass.selected {
            g_weights[slot] += g_doc * pass.scores[j];
            let c = g_doc * setup.weights[slot] / setup.temperature;
            if c == 0.0 {
                continue;
            }
            let v = &pass.proj[j];
            let nv = l2(v);
            let cos = pass.scores[j] * setup.temperature;
            // d cos / du and d cos / dv
            let mut g_v = vec![0.0; d_out];
            for k in 0..d_out {
                g_u[k] += c * (v[k] / (nu * nv) - cos * u[k] / (nu * nu));
                g_v[k] = c * (u[k] / (nu * nv) - cos * v[k] / (nv * nv));
            }
            let b = &blocks[j];
            for (i, &bi) in b.iter().enumerate() {
                if bi == 0.0 {
                    continue;
                }
                let row = &mut g_head[i * d_out..(i + 1) * d_out];
                for (r, gv) in row.iter_mut().zip(&g_v) {
                    *r += bi * gv;
                }
            }
        }
    }
    for (i, &qi) in ex.query.iter().enumerate() {
        if qi == 0.0 {
            continue;
        }
        let row = &mut g_head[i * d_out..(i + 1) * d_out];
        for (r, gu) in row.iter_mut().zip(&g_u) {
            *r += qi * gu;
        }
    }
    Ok((
        fwd,
        Gradient {
            head: g_head,
            weights: g_weights,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    /// Number of parameter updates.
    pub steps: usize,
    /// Triplets per update.
    pub accumulation: usize,
    pub learn_weights: bool,
    pub freeze_projection: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::default(),
            learning_rate: DEFAULT_LEARNING_RATE,
            steps: 100,
            accumulation: DEFAULT_ACCUMULATION,
            learn_weights: false,
            freeze_projection: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "training.learning_rate",
                "must be finite and >= 0",
            ));
        }
        if self.accumulation == 0 {
            return Err(Error::config("training.accumulation", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLoss {
    pub step: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    /// Present only when weights were learned.
    pub weights: Option<Vec<f64>>,
    pub curve: Vec<StepLoss>,
}

/// Mean loss over all examples.
pub fn mean_loss(
    examples: &[ResolvedTriplet],
    head: &ProjectionHead,
    setup: &ScoringSetup,
    loss: &Loss,
) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += triplet_forward(ex, head, setup, loss)?.loss;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Run `config.steps` SGD updates. Examples are consumed cyclically in order,
/// `config.accumulation` per update; forward passes inside a window may run
/// on `pool` and are reduced in window order.
pub fn train(
    examples: &[ResolvedTriplet],
    head: ProjectionHead,
    setup: &ScoringSetup,
    config: &TrainConfig,
    pool: &Pool,
) -> Result<TrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs at least one triplet".into(),
        ));
    }
    let mut head = head;
    let mut setup = setup.clone();
    let mut curve = Vec::with_capacity(config.steps);
    let window: Vec<usize> = (0..config.accumulation).collect();

    for step in 0..config.steps {
        let results = pool.map(&window, |&i| {
            let ex = &examples[(step * config.accumulation + i) % examples.len()];
            gradient(ex, &head, &setup, &config.loss)
        });
        let mut g_head = vec![0.0; head.matrix.len()];
        let mut g_w = vec![0.0; setup.weights.len()];
        let mut total = 0.0;
        for r in results {
            let (fwd, g) = r?;
            total += fwd.loss;
            for (a, b) in g_head.iter_mut().zip(&g.head) {
                *a += b;
            }
            for (a, b) in g_w.iter_mut().zip(&g.weights) {
                *a += b;
            }
        }
        let n = config.accumulation as f64;
        let mean = total / n;
        if !mean.is_finite() || g_head.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("mean loss {mean}"),
            });
        }
        curve.push(StepLoss {
            step,
            mean_loss: mean,
        });
        let lr = config.learning_rate / n;
        if !config.freeze_projection {
            for (m, g) in head.matrix.iter_mut().zip(&g_head) {
                *m -= lr * g;
            }
        }
        if config.learn_weights {
            for (w, g) in setup.weights.iter_mut().zip(&g_w) {
                *w = (*w - lr * g).max(0.0);
            }
        }
    }
    Ok(TrainOutcome {
        head,
        weights: config.learn_weights.then_some(setup.weights),
        curve,
    })
}

/// Serialize a head (and optionally learned weights) as `BREPSPJ1`.
pub fn write_head(
    path: impl AsRef<Path>,
    head: &ProjectionHead,
    weights: Option<&[f64]>,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut buf = Vec::with_capacity(16 + head.matrix.len() * 4);
    buf.extend_from_slice(HEAD_MAGIC);
    buf.extend_from_slice(&(head.d_in as u32).to_le_bytes());
    buf.extend_from_slice(&(head.d_out as u32).to_le_bytes());
    for &m in &head.matrix {
        buf.extend_from_slice(&(m as f32).to_le_bytes());
    }
    if let Some(w) = weights {
        buf.extend_from_slice(&(w.len() as u32).to_le_bytes());
        for &x in w {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let mut f = BufWriter::new(File::create(path).map_err(io)?);
    f.write_all(&buf).map_err(io)?;
    f.flush().map_err(io)
}

pub fn read_head(path: impl AsRef<Path>) -> Result<(ProjectionHead, Option<Vec<f64>>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_head(&bytes)
}

pub fn parse_head(bytes: &[u8]) -> Result<(ProjectionHead, Option<Vec<f64>>)> {
    if bytes.len() < 16 {
        return Err(Error::TruncatedFile("projection head header".into()));
    }
    let magic: [u8; 8] = bytes[..8].try_into().unwrap();
    if &magic != HEAD_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    let f32s = |from: usize, n: usize| -> Vec<f64> {
        bytes[from..from + 4 * n]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect()
    };
    let (d_in, d_out) = (u32_at(8), u32_at(12));
    let n = d_in
        .checked_mul(d_out)
        .ok_or_else(|| Error::Corrupt("head size overflow".into()))?;
    let mut pos = 16;
    if bytes.len() < pos + 4 * n {
        return Err(Error::TruncatedFile("projection matrix".into()));
    }
    let head = ProjectionHead::from_matrix(d_in, d_out, f32s(pos, n))?;
    pos += 4 * n;
    if pos == bytes.len() {
        return Ok((head, None));
    }
    if bytes.len() < pos + 4 {
        return Err(Error::TruncatedFile("weight count".into()));
    }
    let k = u32_at(pos);
    pos += 4;
    if bytes.len() != pos + 4 * k {
        return Err(Error::TruncatedFile("weights".into()));
    }
    Ok((head, Some(f32s(pos, k))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_example(rng: &mut ChaCha8Rng, dim: usize, blocks: usize) -> ResolvedTriplet {
        let mut v = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        ResolvedTriplet {
            query: v(1).pop().unwrap(),
            positive: v(blocks),
            negative: v(blocks),
        }
    }

    #[test]
    fn hinge_values() {
        assert_eq!(hinge_loss(15.0, 3.0, 10.0), 0.0);
        assert_eq!(hinge_loss(4.0, 4.0, 10.0), 10.0);
        assert_eq!(hinge_loss(2.0, 5.0, 10.0), 13.0);
    }

    #[test]
    fn ranknet_values() {
        assert!((ranknet_loss(1.0, 1.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-6);
        assert!((ranknet_loss(0.0, 1.0, 1.0) - 1.3132616875).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for gap in [-50.0, -1.0, 0.0, 1.0, 10.0, 100.0, 700.0] {
            let l = ranknet_loss(gap, 0.0, 1.0);
            assert!(l < prev && l >= 0.0 && l.is_finite());
            prev = l;
        }
        assert!(ranknet_loss(1000.0, 0.0, 1.0) < 1e-300);
        let d = Loss::RankNet { sigma: 2.0 }.d_pos(3.0, 3.0);
        assert!((d + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hinge_flat_region_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ex = random_example(&mut rng, 4, 2);
        ex.positive = vec![ex.query.clone()];
        ex.negative = vec![ex.query.iter().map(|x| -x).collect()];
        let head = ProjectionHead::identity(4);
        let (fwd, g) = gradient(&ex, &head, &ScoringSetup::default(), &Loss::default()).unwrap();
        assert_eq!(fwd.loss, 0.0);
        assert!(g.head.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identical_documents_rejected() {
        let t = TrainingTriplet {
            query: "q".into(),
            positive_doc_id: "d".into(),
            negative_doc_id: "d".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s");
        crate::store::write_store(&p, &[], 4).unwrap();
        let store = crate::store::read_store(&p).unwrap();
        let e = crate::embed::HashEmbedder::new(4, 0);
        assert!(matches!(
            resolve_triplet(&t, &store, &e, &InputFormat::default()),
            Err(Error::InvalidTriplet(_))
        ));
    }

    #[test]
    fn zero_steps_leave_head_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = vec![random_example(&mut rng, 6, 3)];
        let head = ProjectionHead::near_identity(6, 0.01, 5);
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        let out = train(
            &ex,
            head.clone(),
            &ScoringSetup::default(),
            &cfg,
            &Pool::sequential(),
        )
        .unwrap();
        assert_eq!(out.head, head);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn learned_weights_stay_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex: Vec<_> = (0..6).map(|_| random_example(&mut rng, 6, 4)).collect();
        let head = ProjectionHead::identity(6);
        let cfg = TrainConfig {
            steps: 50,
            learning_rate: 0.05,
            learn_weights: true,
            freeze_projection: true,
            ..Default::default()
        };
        let out = train(
            &ex,
            head.clone(),
            &ScoringSetup::default(),
            &cfg,
            &Pool::sequential(),
        )
        .unwrap();
        assert_eq!(out.head, head);
        let w = out.weights.unwrap();
        assert!(w.iter().all(|&x| x >= 0.0));
        assert_ne!(w, vec![0.5, 0.3, 0.2]);
    }

    #[test]
    fn parallel_window_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ex: Vec<_> = (0..7).map(|_| random_example(&mut rng, 5, 3)).collect();
        let head = ProjectionHead::near_identity(5, 0.1, 1);
        let cfg = TrainConfig {
            steps: 10,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let a = train(
            &ex,
            head.clone(),
            &ScoringSetup::default(),
            &cfg,
            &Pool::sequential(),
        )
        .unwrap();
        let b = train(&ex, head, &ScoringSetup::default(), &cfg, &Pool::new(4)).unwrap();
        assert_eq!(a.head, b.head);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn head_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.bin");
        let head = ProjectionHead::from_matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, -6.5]).unwrap();
        write_head(&p, &head, None).unwrap();
        assert_eq!(read_head(&p).unwrap(), (head.clone(), None));
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"BREPSPJ1");
        assert_eq!(bytes.len(), 16 + 6 * 4);
        write_head(&p, &head, Some(&[0.5, 0.25])).unwrap();
        assert_eq!(read_head(&p).unwrap().1, Some(vec![0.5, 0.25]));
        let mut bad = std::fs::read(&p).unwrap();
        bad.pop();
        assert!(parse_head(&bad).is_err());
    }
}
