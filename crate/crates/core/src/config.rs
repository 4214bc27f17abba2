//! Engine configuration loaded from TOML.
//!
//! Every section is optional; defaults follow the reference setup (20 blocks
//! of at most 63 tokens, top-3 weights `[0.5, 0.3, 0.2]`, temperature 0.01,
//! hinge margin 10, learning rate 5e-5, 32 query tokens). The embedding
//! service URL may be overridden with `BREPS_EMBED_URL`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::embed::{
    Embedder, HashEmbedder, InputFormat, ServiceEmbedder, DEFAULT_DIM, DEFAULT_SEED,
    DEFAULT_TERMINATOR, MAX_QUERY_TOKENS,
};
use crate::error::{Error, Result};
use crate::scoring::{ScoringConfig, WeightVector, DEFAULT_TEMPERATURE, DEFAULT_WEIGHTS};
use crate::segment::{default_punctuation_weights, SegmentationConfig, SegmentationStrategy};
use crate::train::{
    read_head, Loss, ProjectionHead, ScoringSetup, TrainConfig, DEFAULT_ACCUMULATION,
    DEFAULT_LEARNING_RATE, DEFAULT_MARGIN, DEFAULT_SIGMA,
};

pub const EMBED_URL_ENV: &str = "BREPS_EMBED_URL";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub dim: usize,
    /// Worker threads; 0 = all cores.
    pub parallelism: usize,
    pub segmentation: SegmentationSection,
    pub scoring: ScoringSection,
    pub embedder: EmbedderSection,
    pub training: TrainingSection,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            parallelism: 0,
            segmentation: SegmentationSection::default(),
            scoring: ScoringSection::default(),
            embedder: EmbedderSection::default(),
            training: TrainingSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Dp,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationSection {
    pub strategy: StrategyName,
    pub max_block_tokens: usize,
    pub max_blocks: usize,
    pub fixed_length: Option<usize>,
    pub punctuation_weights: Option<BTreeMap<String, f64>>,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        Self {
            strategy: StrategyName::Dp,
            max_block_tokens: 63,
            max_blocks: 20,
            fixed_length: None,
            punctuation_weights: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsMode {
    Descending,
    Average,
    Custom,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub k: usize,
    pub weights: WeightsMode,
    pub custom_weights: Option<Vec<f64>>,
    pub temperature: f64,
    /// Score only the first n stored blocks.
    pub inference_blocks: Option<usize>,
    /// Trained projection head applied to query and block vectors.
    pub head: Option<PathBuf>,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self {
            k: 3,
            weights: WeightsMode::Descending,
            custom_weights: None,
            temperature: DEFAULT_TEMPERATURE,
            inference_blocks: None,
            head: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderName {
    Hash,
    Service,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSection {
    pub kind: EmbedderName,
    pub seed: u64,
    pub url: Option<String>,
    pub terminator: String,
    pub max_query_tokens: usize,
    pub batch_size: usize,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        Self {
            kind: EmbedderName::Hash,
            seed: DEFAULT_SEED,
            url: None,
            terminator: DEFAULT_TERMINATOR.to_string(),
            max_query_tokens: MAX_QUERY_TOKENS,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Hinge,
    Ranknet,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub loss: LossName,
    pub margin: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub accumulation: usize,
    pub learn_weights: bool,
    pub freeze_projection: bool,
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            loss: LossName::Hinge,
            margin: DEFAULT_MARGIN,
            sigma: DEFAULT_SIGMA,
            learning_rate: DEFAULT_LEARNING_RATE,
            steps: 100,
            accumulation: DEFAULT_ACCUMULATION,
            learn_weights: false,
            freeze_projection: false,
            init_noise: 1e-3,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| {
            let key = e.message().to_string();
            Error::config(
                "<file>",
                format!("{key} ({})", e.to_string().lines().next().unwrap_or("")),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        self.segmentation_config()?;
        self.scoring_config()?;
        self.train_config()?;
        if !(self.scoring.temperature > 0.0 && self.scoring.temperature.is_finite()) {
            return Err(Error::config("scoring.temperature", "must be positive"));
        }
        if self.scoring.inference_blocks == Some(0) {
            return Err(Error::config("scoring.inference_blocks", "must be >= 1"));
        }
        if self.embedder.batch_size == 0 {
            return Err(Error::config("embedder.batch_size", "must be >= 1"));
        }
        if self.embedder.kind == EmbedderName::Service && self.service_url().is_none() {
            return Err(Error::config(
                "embedder.url",
                format!("required for the service embedder (or set {EMBED_URL_ENV})"),
            ));
        }
        if !(self.training.init_noise >= 0.0 && self.training.init_noise.is_finite()) {
            return Err(Error::config(
                "training.init_noise",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }

    pub fn segmentation_config(&self) -> Result<SegmentationConfig> {
        let s = &self.segmentation;
        let strategy = match s.strategy {
            StrategyName::Dp => SegmentationStrategy::DynamicProgramming,
            StrategyName::Fixed => {
                SegmentationStrategy::FixedLength(s.fixed_length.unwrap_or(s.max_block_tokens))
            }
        };
        let punctuation_weights = match &s.punctuation_weights {
            None => default_punctuation_weights(),
            Some(map) => {
                let mut out = BTreeMap::new();
                for (k, w) in map {
                    let mut chars = k.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => {
                            out.insert(c, *w);
                        }
                        _ => {
                            return Err(Error::config(
                                format!("segmentation.punctuation_weights.{k}"),
                                "keys must be single characters",
                            ))
                        }
                    }
                }
                out
            }
        };
        let cfg = SegmentationConfig {
            max_block_tokens: s.max_block_tokens,
            max_blocks: s.max_blocks,
            punctuation_weights,
            strategy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn weight_vector(&self) -> Result<Option<WeightVector>> {
        let sc = &self.scoring;
        if sc.k == 0 {
            return Err(Error::config("scoring.k", "must be >= 1"));
        }
        let key = "scoring.custom_weights";
        let wrap = |r: Result<WeightVector>| r.map_err(|e| Error::config(key, e.to_string()));
        Ok(Some(match sc.weights {
            WeightsMode::Descending => match &sc.custom_weights {
                Some(w) => wrap(WeightVector::descending(w.clone()))?,
                None if sc.k == DEFAULT_WEIGHTS.len() => WeightVector::default(),
                None => {
                    return Err(Error::config(
                        key,
                        format!(
                            "descending weights for k = {} must be listed explicitly",
                            sc.k
                        ),
                    ))
                }
            },
            WeightsMode::Average => WeightVector::average(sc.k)?,
            WeightsMode::Custom => match &sc.custom_weights {
                Some(w) => wrap(WeightVector::unconstrained(w.clone()))?,
                None => {
                    return Err(Error::config(
                        key,
                        "required when scoring.weights = \"custom\"",
                    ))
                }
            },
            WeightsMode::Learned => {
                if sc.head.is_none() {
                    return Err(Error::config(
                        "scoring.head",
                        "required when scoring.weights = \"learned\"",
                    ));
                }
                return Ok(None);
            }
        }))
    }

    /// Scoring settings; learned weights and the head are read from disk.
    pub fn scoring_config(&self) -> Result<ScoringConfig> {
        let weights = self.weight_vector()?.unwrap_or_default();
        Ok(ScoringConfig {
            weights,
            temperature: self.scoring.temperature,
            max_blocks: self.scoring.inference_blocks,
        })
    }

    /// Scoring config plus the projection head, resolving learned weights.
    pub fn load_scoring(&self) -> Result<(ScoringConfig, Option<ProjectionHead>)> {
        let mut cfg = self.scoring_config()?;
        let Some(path) = &self.scoring.head else {
            return Ok((cfg, None));
        };
        let (head, learned) = read_head(path)?;
        if head.d_in() != self.dim {
            return Err(Error::config(
                "scoring.head",
                format!("head input dimension {} != dim {}", head.d_in(), self.dim),
            ));
        }
        if self.scoring.weights == WeightsMode::Learned {
            let w = learned.ok_or_else(|| {
                Error::config("scoring.head", "head file carries no learned weights")
            })?;
            cfg.weights = WeightVector::unconstrained(w)
                .map_err(|e| Error::config("scoring.head", e.to_string()))?;
        }
        Ok((cfg, Some(head)))
    }

    pub fn input_format(&self) -> InputFormat {
        InputFormat {
            terminator: self.embedder.terminator.clone(),
            max_query_tokens: self.embedder.max_query_tokens,
        }
    }

    pub fn service_url(&self) -> Option<String> {
        std::env::var(EMBED_URL_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| self.embedder.url.clone())
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>> {
        Ok(match self.embedder.kind {
            EmbedderName::Hash => Box::new(HashEmbedder::with_format(
                self.dim,
                self.embedder.seed,
                self.input_format(),
            )),
            EmbedderName::Service => {
                let url = self
                    .service_url()
                    .ok_or_else(|| Error::config("embedder.url", "missing"))?;
                Box::new(
                    ServiceEmbedder::new(url, self.dim).with_batch_size(self.embedder.batch_size),
                )
            }
        })
    }

    pub fn loss(&self) -> Loss {
        match self.training.loss {
            LossName::Hinge => Loss::Hinge {
                margin: self.training.margin,
            },
            LossName::Ranknet => Loss::RankNet {
                sigma: self.training.sigma,
            },
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        let cfg = TrainConfig {
            loss: self.loss(),
            learning_rate: t.learning_rate,
            steps: t.steps,
            accumulation: t.accumulation,
            learn_weights: t.learn_weights,
            freeze_projection: t.freeze_projection,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Initial weights and scoring for training (learned mode starts from the default).
    pub fn scoring_setup(&self) -> Result<ScoringSetup> {
        let sc = self.scoring_config()?;
        Ok(ScoringSetup {
            weights: sc.weights.into_vec(),
            temperature: sc.temperature,
            max_blocks: sc.max_blocks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = EngineConfig::from_toml_str("").unwrap();
        assert_eq!(c, EngineConfig::default());
        let s = c.scoring_config().unwrap();
        assert_eq!(s.weights.as_slice(), &[0.5, 0.3, 0.2]);
        assert_eq!(s.temperature, 0.01);
        let seg = c.segmentation_config().unwrap();
        assert_eq!((seg.max_block_tokens, seg.max_blocks), (63, 20));
        let t = c.train_config().unwrap();
        assert_eq!(t.loss, Loss::Hinge { margin: 10.0 });
        assert_eq!(t.learning_rate, 5e-5);
        assert_eq!(t.accumulation, 4);
        assert_eq!(c.input_format().max_query_tokens, 32);
    }

    #[test]
    fn sections_parse() {
        let c = EngineConfig::from_toml_str(
            r#"
            dim = 16
            [segmentation]
            strategy = "fixed"
            fixed_length = 10
            [scoring]
            weights = "average"
            k = 4
            inference_blocks = 15
            [training]
            loss = "ranknet"
            sigma = 2.0
            "#,
        )
        .unwrap();
        assert_eq!(
            c.segmentation_config().unwrap().strategy,
            SegmentationStrategy::FixedLength(10)
        );
        assert_eq!(c.scoring_config().unwrap().weights.as_slice(), &[0.25; 4]);
        assert_eq!(c.scoring_config().unwrap().max_blocks, Some(15));
        assert_eq!(c.loss(), Loss::RankNet { sigma: 2.0 });
    }

    fn key_of(text: &str) -> String {
        match EngineConfig::from_toml_str(text) {
            Err(Error::InvalidConfig { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_their_key() {
        assert_eq!(key_of("dim = 0"), "dim");
        assert_eq!(
            key_of("[segmentation]\nmax_block_tokens = 0"),
            "segmentation.max_block_tokens"
        );
        assert_eq!(key_of("[training]\nmargin = -1.0"), "training.margin");
        assert_eq!(
            key_of("[scoring]\nweights = \"custom\""),
            "scoring.custom_weights"
        );
        assert_eq!(
            key_of("[scoring]\ncustom_weights = [0.1, 0.9, 0.0]"),
            "scoring.custom_weights"
        );
        assert_eq!(key_of("[scoring]\nk = 4"), "scoring.custom_weights");
        assert_eq!(
            key_of("[scoring]\ntemperature = 0.0"),
            "scoring.temperature"
        );
        assert_eq!(
            key_of("[segmentation.punctuation_weights]\n\"ab\" = 1.0"),
            "segmentation.punctuation_weights.ab"
        );
        assert!(EngineConfig::from_toml_str("bogus = 1").is_err());
    }
}
