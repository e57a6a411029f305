//! Pipeline configuration: one TOML file with a section per stage.

use std::path::{Path, PathBuf};

use elfis_core::data::SyntheticConfig;
use elfis_core::losses::{DistillationMode, LossWeights};
use elfis_core::model::{Aggregation, ModelConfig};
use elfis_core::subsetting::CombineMode;
use elfis_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "ELFIS_SEED";

/// A configuration problem; reported with exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Read this dataset file instead of generating one.
    pub path: Option<PathBuf>,
    pub n_groups: usize,
    pub classes_per_group: usize,
    pub input_dim: usize,
    pub group_sep: f64,
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub samples_per_class: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        DataSection {
            path: None,
            n_groups: s.n_groups,
            classes_per_group: s.classes_per_group,
            input_dim: s.input_dim,
            group_sep: s.group_sep,
            class_sep: s.class_sep,
            noise_sigma: s.noise_sigma,
            samples_per_class: s.samples_per_class,
            split: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub backbone_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub expert_blocks: usize,
    pub cosine_scale: f64,
    pub aggregation: Aggregation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            backbone_hidden: m.backbone_hidden,
            feature_dim: m.feature_dim,
            expert_blocks: m.expert_blocks,
            cosine_scale: m.cosine_scale,
            aggregation: m.aggregation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_lr: f64,
    pub cycle_epochs: usize,
    pub annihilation_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub momentum: f64,
    pub grad_clip: f64,
    pub distillation: DistillationMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub live_targets: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            max_lr: t.max_lr,
            cycle_epochs: t.cycle_epochs,
            annihilation_epochs: t.annihilation_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            momentum: t.momentum,
            grad_clip: t.grad_clip,
            distillation: t.distillation,
            lambda1: t.weights.lambda1,
            lambda2: t.weights.lambda2,
            lambda3: t.weights.lambda3,
            live_targets: t.live_targets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub mode: CombineMode,
    /// Fraction of classes that gives the cluster count.
    pub ratio: f64,
    /// Explicit cluster count; overrides `ratio` when set.
    pub k: Option<usize>,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            mode: CombineMode::StdAverage,
            ratio: 0.10,
            k: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Hash,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingsSection {
    pub source: EmbeddingSource,
    pub hash_dim: usize,
    pub hash_seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for EmbeddingsSection {
    fn default() -> Self {
        EmbeddingsSection {
            source: EmbeddingSource::Hash,
            hash_dim: 2048,
            hash_seed: 0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("elfis-out") }
    }
}

/// Every stage reads its settings from here; `seed` drives data generation,
/// splitting, initialization and batch order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub cluster: ClusterSection,
    pub embeddings: EmbeddingsSection,
    pub output: OutputSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads `path` (defaults when `None`), applies `ELFIS_SEED` and validates.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Ok(raw) = std::env::var(SEED_ENV) {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        let d = &self.data;
        SyntheticConfig {
            n_groups: d.n_groups,
            classes_per_group: d.classes_per_group,
            input_dim: d.input_dim,
            group_sep: d.group_sep,
            class_sep: d.class_sep,
            noise_sigma: d.noise_sigma,
            samples_per_class: d.samples_per_class,
            seed: self.seed,
        }
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        let [a, b, c] = self.data.split;
        (a, b, c)
    }

    pub fn model_config(&self, input_dim: usize, n_classes: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            input_dim,
            backbone_hidden: m.backbone_hidden.clone(),
            feature_dim: m.feature_dim,
            n_classes,
            expert_blocks: m.expert_blocks,
            cosine_scale: m.cosine_scale,
            aggregation: m.aggregation,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            max_lr: t.max_lr,
            cycle_epochs: t.cycle_epochs,
            annihilation_epochs: t.annihilation_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            momentum: t.momentum,
            grad_clip: t.grad_clip,
            distillation: t.distillation,
            weights: LossWeights {
                lambda1: t.lambda1,
                lambda2: t.lambda2,
                lambda3: t.lambda3,
            },
            live_targets: t.live_targets,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let check = |r: elfis_core::Result<()>| r.map_err(|e| invalid(e.to_string()));
        if self.data.path.is_none() {
            check(self.synthetic().validate())?;
        }
        let [a, b, c] = self.data.split;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "data.split {:?} must be three positive fractions summing to 1",
                self.data.split
            )));
        }
        check(self.model_config(self.data.input_dim.max(1), 2).validate())?;
        check(self.train_config().validate())?;
        if self.model.aggregation == Aggregation::Median {
            return Err(invalid("model.aggregation = \"median\" cannot be trained; use mean, max or concat"));
        }
        let r = self.cluster.ratio;
        if !(r > 0.0 && r <= 1.0) {
            return Err(invalid(format!("cluster.ratio must lie in (0, 1], got {r}")));
        }
        if self.cluster.k == Some(0) {
            return Err(invalid("cluster.k must be positive"));
        }
        match self.embeddings.source {
            EmbeddingSource::Hash if self.embeddings.hash_dim < 8 => {
                return Err(invalid("embeddings.hash_dim must be at least 8"));
            }
            EmbeddingSource::File if self.embeddings.path.is_none() => {
                return Err(invalid("embeddings.source = \"file\" needs embeddings.path"));
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        assert!(text.contains("[train]"));
        assert!(text.contains("mode = \"std_average\""));
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn partial_files_keep_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 7\n[train]\nmax_epochs = 20\npatience = 5\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.max_epochs, 20);
        assert_eq!(cfg.train.lambda2, 10.0);
        assert_eq!(cfg.train_config().seed, 7);
        assert_eq!(cfg.model_config(16, 20).seed, 7);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_toml("[train]\nlearning_rate = 1.0\n").is_err());
        let bad = PipelineConfig::from_toml("[cluster]\nratio = 0.0\n").unwrap();
        assert!(bad.validate().is_err());
        let bad = PipelineConfig::from_toml("[data]\nsplit = [0.5, 0.5, 0.5]\n").unwrap();
        assert!(bad.validate().is_err());
        let bad = PipelineConfig::from_toml("[model]\naggregation = \"median\"\n").unwrap();
        assert!(bad.validate().unwrap_err().downcast_ref::<ConfigError>().is_some());
    }
}
