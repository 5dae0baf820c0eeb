//! The JSON run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mcsm_core::data::{Dataset, Split, SyntheticConfig};
use mcsm_core::fusion::NormalizationScope;
use mcsm_core::space::{SpaceConfig, SpaceKind};
use mcsm_core::training::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("config: {0}")]
    Invalid(String),
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required, either here or on the command line. Every random stream
    /// (synthetic data, initialization, triplet sampling) derives from it.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Dataset manifest; when absent the synthetic generator is used.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub synthetic: SyntheticBlock,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub train: TrainBlock,
    #[serde(default)]
    pub eval: EvalBlock,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            manifest: None,
            out: default_out(),
            synthetic: SyntheticBlock::default(),
            model: ModelBlock::default(),
            train: TrainBlock::default(),
            eval: EvalBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBlock {
    pub categories: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    pub grid_size: usize,
    pub region_dim: usize,
    pub word_dim: usize,
    pub global_dim: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub latent_dim: usize,
    pub noise: f64,
    pub scale: f64,
}

impl Default for SyntheticBlock {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            categories: d.categories,
            train_pairs: d.train_pairs,
            val_pairs: d.val_pairs,
            test_pairs: d.test_pairs,
            grid_size: d.grid_size,
            region_dim: d.region_dim,
            word_dim: d.word_dim,
            global_dim: d.global_dim,
            min_words: d.min_words,
            max_words: d.max_words,
            latent_dim: d.latent_dim,
            noise: d.noise,
            scale: d.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub hidden_dim: usize,
    /// Defaults to `hidden_dim`.
    pub attention_dim: Option<usize>,
    /// Defaults to the image global width, which the text space requires.
    pub target_dim: Option<usize>,
    pub lstm_layers: usize,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            attention_dim: None,
            target_dim: None,
            lstm_layers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBlock {
    pub learning_rate: f64,
    pub margin_image: f64,
    pub margin_text: f64,
    pub triplets_per_step: usize,
    pub max_iterations: usize,
    pub validation_interval: usize,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            margin_image: d.margin_image,
            margin_text: d.margin_text,
            triplets_per_step: d.triplets_per_step,
            max_iterations: d.max_iterations,
            validation_interval: d.validation_interval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    PerRow,
}

impl From<Scope> for NormalizationScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::Global => NormalizationScope::Global,
            Scope::PerRow => NormalizationScope::PerRow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    /// `"train"`, `"val"` or `"test"`.
    pub split: String,
    pub per_space: bool,
    pub late_fusion: bool,
    pub adaptive_fusion: bool,
    pub normalization: Scope,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            split: "test".into(),
            per_space: true,
            late_fusion: true,
            adaptive_fusion: true,
            normalization: Scope::Global,
        }
    }
}

/// Offsets that separate the random streams derived from the run seed.
const IMAGE_INIT: u64 = 1;
const TEXT_INIT: u64 = 2;
const IMAGE_SAMPLING: u64 = 3;
const TEXT_SAMPLING: u64 = 4;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Checks the fields that do not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.seed.is_none() {
            return bad("a seed is required (set \"seed\" or pass --seed)".into());
        }
        if let Some(m) = &self.manifest {
            if !m.is_file() {
                return bad(format!("manifest {} does not exist", m.display()));
            }
        }
        if self.eval.split.parse::<Split>().is_err() {
            return bad(format!("unknown eval split {:?}", self.eval.split));
        }
        if self.model.hidden_dim == 0 || self.model.lstm_layers == 0 {
            return bad("model widths and layer counts must be positive".into());
        }
        self.train_config(SpaceKind::Image)
            .validate()
            .or_else(|e| bad(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let s = &self.synthetic;
        SyntheticConfig {
            categories: s.categories,
            train_pairs: s.train_pairs,
            val_pairs: s.val_pairs,
            test_pairs: s.test_pairs,
            grid_size: s.grid_size,
            region_dim: s.region_dim,
            word_dim: s.word_dim,
            global_dim: s.global_dim,
            min_words: s.min_words,
            max_words: s.max_words,
            latent_dim: s.latent_dim,
            noise: s.noise,
            scale: s.scale,
            seed: self.seed(),
        }
    }

    pub fn train_config(&self, kind: SpaceKind) -> TrainConfig {
        let t = &self.train;
        let offset = match kind {
            SpaceKind::Image => IMAGE_SAMPLING,
            SpaceKind::Text => TEXT_SAMPLING,
        };
        TrainConfig {
            learning_rate: t.learning_rate,
            margin_image: t.margin_image,
            margin_text: t.margin_text,
            triplets_per_step: t.triplets_per_step,
            max_iterations: t.max_iterations,
            seed: self.seed.unwrap_or(0).wrapping_add(offset),
            validation_interval: t.validation_interval,
        }
    }

    pub fn init_seed(&self, kind: SpaceKind) -> u64 {
        let offset = match kind {
            SpaceKind::Image => IMAGE_INIT,
            SpaceKind::Text => TEXT_INIT,
        };
        self.seed().wrapping_add(offset)
    }

    pub fn eval_split(&self) -> Split {
        self.eval.split.parse().expect("validated split")
    }

    /// The space layout implied by this config and the dataset's widths.
    pub fn space_config(&self, kind: SpaceKind, ds: &Dataset) -> Result<SpaceConfig> {
        let first = ds
            .pairs
            .first()
            .ok_or_else(|| ConfigError::Invalid("the dataset is empty".into()))?;
        let region_dim = first.image.sequence.dim();
        let word_dim = first.text.sequence.dim();
        let global_dim = first.image.global.len();
        let regions = first.image.sequence.rows();
        let grid = (1..=regions).find(|g| g * g >= regions).unwrap_or(0);
        let target = self.model.target_dim.unwrap_or(global_dim);
        if kind == SpaceKind::Text && target != global_dim {
            return Err(ConfigError::Invalid(format!(
                "target_dim {target} must equal the image global width {global_dim} for the text space"
            )));
        }
        let base = match kind {
            SpaceKind::Image => SpaceConfig::image(region_dim, word_dim, target),
            SpaceKind::Text => SpaceConfig::text(word_dim, target),
        };
        let mut cfg = base.with_hidden(self.model.hidden_dim);
        cfg.attention_dim = self.model.attention_dim.unwrap_or(self.model.hidden_dim);
        cfg.lstm_layers = self.model.lstm_layers;
        if kind == SpaceKind::Image {
            cfg.grid_size = if grid * grid == regions { grid } else { 0 };
        }
        Ok(cfg)
    }
}
