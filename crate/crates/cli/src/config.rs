use std::fs;
use std::path::{Path, PathBuf};

use poolrank::candidates::{LabelScope, LoadOptions};
use poolrank::features::{FeatureMode, LexicalOptions};
use poolrank::metrics::{MetricId, MetricRegistry};
use poolrank::moe::ModelConfig;
use poolrank::training::TrainConfig;
use poolrank::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run needs. Every section is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub strict: bool,
    pub data: DataSection,
    pub metrics: MetricsSection,
    pub methods: MethodsSection,
    pub features: FeaturesSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Task order of the model. Names other than rouge1, rouge2 and rougeL
    /// are external metrics whose scores must already be in the data.
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodsSection {
    pub train: Vec<String>,
    /// Defaults to the training set.
    pub test: Vec<String>,
    /// Method whose first candidate counts as the base model's output.
    pub base: Option<String>,
    /// Methods whose first candidates are compared against in gain and
    /// significance reports.
    pub baselines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub mode: FeatureMode,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub lexical: LexicalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub bottom_hidden: [usize; 2],
    pub expert_hidden: [usize; 2],
    /// 0 means twice the number of metrics.
    pub num_experts: usize,
    pub expert_dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub m_top: usize,
    pub m_bottom: usize,
    pub warmup_fraction: f64,
    pub peak_lr: f64,
    pub label_scope: LabelScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub alpha: f64,
    /// 0 means the largest pool size.
    pub max_k: usize,
    pub novelty_ns: Vec<usize>,
    pub subsample_ks: Vec<usize>,
    pub subsample_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            strict: false,
            data: DataSection::default(),
            metrics: MetricsSection::default(),
            methods: MethodsSection::default(),
            features: FeaturesSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            names: MetricRegistry::native().names(),
        }
    }
}

impl Default for MethodsSection {
    fn default() -> Self {
        MethodsSection {
            train: vec!["beam".into()],
            test: Vec::new(),
            base: None,
            baselines: Vec::new(),
        }
    }
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            mode: FeatureMode::Lexical,
            train_path: None,
            val_path: None,
            test_path: None,
            lexical: LexicalOptions::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            bottom_hidden: [64, 64],
            expert_hidden: [64, 64],
            num_experts: 0,
            expert_dropout: 0.5,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            m_top: t.m_top,
            m_bottom: t.m_bottom,
            warmup_fraction: t.warmup_fraction,
            peak_lr: t.peak_lr,
            label_scope: t.label_scope,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            alpha: 0.05,
            max_k: 0,
            novelty_ns: vec![1, 2, 3, 4],
            subsample_ks: Vec::new(),
            subsample_trials: 20,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn registry(&self) -> Result<MetricRegistry> {
        if self.metrics.names.is_empty() {
            return Err(Error::InvalidArgument("metric list is empty".into()));
        }
        MetricRegistry::from_names(&self.metrics.names)
    }

    pub fn metric_ids(&self) -> Vec<MetricId> {
        self.metrics.names.iter().map(MetricId::new).collect()
    }

    pub fn test_methods(&self) -> &[String] {
        if self.methods.test.is_empty() {
            &self.methods.train
        } else {
            &self.methods.test
        }
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        Ok(LoadOptions::new(self.registry()?).strict(self.strict))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            m_top: t.m_top,
            m_bottom: t.m_bottom,
            train_methods: self.methods.train.clone(),
            metrics: self.metrics.names.clone(),
            warmup_fraction: t.warmup_fraction,
            peak_lr: t.peak_lr,
            seed: self.seed,
            label_scope: t.label_scope,
        }
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        let n = self.metrics.names.len();
        let mut c = ModelConfig::new(input_dim, n);
        c.bottom_hidden = self.model.bottom_hidden;
        c.expert_hidden = self.model.expert_hidden;
        if self.model.num_experts > 0 {
            c.num_experts = self.model.num_experts;
        }
        c.expert_dropout = self.model.expert_dropout;
        c.seed = self.seed;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 3").is_err());
        let c: RunConfig = toml::from_str("seed = 4\n[train]\nepochs = 2").unwrap();
        assert_eq!((c.seed, c.train.epochs, c.train.batch_size), (4, 2, 32));
    }

    #[test]
    fn experts_default_to_twice_the_tasks() {
        let c = RunConfig::default();
        assert_eq!(c.model_config(16).num_experts, 6);
        assert_eq!(c.test_methods(), ["beam".to_string()]);
    }
}
