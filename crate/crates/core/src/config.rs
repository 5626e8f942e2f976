//! Run configuration for the staged pipeline.
//!
//! TOML with one table per stage; unknown keys are rejected everywhere.
//!
//! ```toml
//! task = "iris"            # iris | blobs | mnist
//! seed = 0
//!
//! [population]
//! layer_dims = [4, 16, 3]
//! size = 50
//! epochs = 100
//!
//! [canonicalize]
//! method = "rebasin"       # off | rebasin | transfusion
//!
//! [pca]
//! method = "off"           # off | standard | incremental | dual
//!
//! [flow]
//! hidden_dim = 256
//!
//! [generate]
//! count = 50
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::flow::{FlowConfig, TimeDistribution};
use crate::nn::{Activation, ArchitectureSpec, AttentionGeometry, InitScheme, OptimizerKind, TrainHyper};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Iris,
    Blobs,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory with the four standard IDX files (mnist task).
    pub mnist_dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub blob_classes: usize,
    pub blob_per_class: usize,
    pub blob_dim: usize,
    pub blob_spread: f64,
    /// Seed of the synthetic dataset, independent of the run seed.
    pub blob_seed: u64,
    /// Training rows used to recalibrate batch norm of generated networks.
    pub calibration_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mnist_dir: None,
            train_limit: None,
            test_limit: None,
            blob_classes: 10,
            blob_per_class: 1000,
            blob_dim: 784,
            blob_spread: 4.5,
            blob_seed: 0,
            calibration_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub layer_dims: Vec<usize>,
    pub activation: String,
    pub batch_norm: bool,
    /// Toy attention block `[num_heads, head_dim]` carried with each
    /// network (not trained; aligned by `transfusion`).
    pub attention: Option<[usize; 2]>,
    pub size: usize,
    /// Explicit seeds; defaults to `seed, seed + 1, ...`.
    pub seeds: Option<Vec<u64>>,
    pub optimizer: String,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init: String,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            layer_dims: vec![4, 16, 3],
            activation: "relu".into(),
            batch_norm: false,
            attention: None,
            size: 50,
            seeds: None,
            optimizer: "adam".into(),
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 16,
            epochs: 100,
            init: "kaiming".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanonMethod {
    Off,
    Rebasin,
    Transfusion,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanonConfig {
    pub method: CanonMethod,
    pub reference_index: usize,
    pub max_iter: usize,
}

impl Default for CanonConfig {
    fn default() -> Self {
        Self {
            method: CanonMethod::Rebasin,
            reference_index: 0,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcaMethod {
    Off,
    Standard,
    Incremental,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    pub method: PcaMethod,
    /// Defaults to `min(n - 1, 99)`.
    pub components: Option<usize>,
    pub micro_batch: usize,
    pub exact_eigen: bool,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            method: PcaMethod::Off,
            components: None,
            micro_batch: 8,
            exact_eigen: false,
        }
    }
}

/// Flow settings; anything left out takes the flow defaults for the
/// target size (small-target defaults below 1000 input dimensions).
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub hidden_dim: Option<usize>,
    pub time_embed_dim: Option<usize>,
    pub dropout: Option<f64>,
    pub sigma: Option<f64>,
    pub source_std: Option<f64>,
    pub time_dist: Option<String>,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eta_min: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnHandling {
    /// Recompute running statistics on calibration data.
    Recalibrate,
    /// Copy running statistics from the reference network.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub count: usize,
    pub bn: BnHandling,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            count: 50,
            bn: BnHandling::Recalibrate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub iou: bool,
    pub distances: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            iou: true,
            distances: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub canonicalize: CanonConfig,
    #[serde(default)]
    pub pca: PcaConfig,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture()?;
        self.train_hyper(0)?;
        let seeds = self.seeds();
        if seeds.is_empty() {
            return Err(Error::Config("population size must be >= 1".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::Config("population seeds must be distinct".into()));
        }
        if let Some(s) = &self.population.seeds {
            if s.len() != self.population.size {
                return Err(Error::Config(format!(
                    "{} seeds listed for a population of {}",
                    s.len(),
                    self.population.size
                )));
            }
        }
        if self.canonicalize.reference_index >= seeds.len() {
            return Err(Error::Config("canonicalize.reference_index is outside the population".into()));
        }
        if self.canonicalize.max_iter == 0 {
            return Err(Error::Config("canonicalize.max_iter must be >= 1".into()));
        }
        if self.pca.micro_batch == 0 {
            return Err(Error::Config("pca.micro_batch must be >= 1".into()));
        }
        if self.task == Task::Mnist && self.data.mnist_dir.is_none() {
            return Err(Error::Config("task = \"mnist\" needs data.mnist_dir".into()));
        }
        self.flow_config(self.architecture()?.param_count())?;
        Ok(())
    }

    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        let act: Activation = self.population.activation.parse()?;
        let dims = &self.population.layer_dims;
        let bn = vec![self.population.batch_norm; dims.len().saturating_sub(2)];
        let attention = self.population.attention.map(|[h, d]| AttentionGeometry::new(h, d));
        ArchitectureSpec::new(dims.clone(), act, bn, attention)
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.population.seeds {
            Some(s) => s.clone(),
            None => (0..self.population.size as u64).map(|i| self.seed + i).collect(),
        }
    }

    pub fn train_hyper(&self, seed: u64) -> Result<TrainHyper> {
        let p = &self.population;
        let optimizer: OptimizerKind = p.optimizer.parse()?;
        let init: InitScheme = p.init.parse()?;
        if p.batch_size == 0 || p.learning_rate.is_nan() || p.learning_rate <= 0.0 {
            return Err(Error::Config("population batch_size and learning_rate must be positive".into()));
        }
        Ok(TrainHyper {
            optimizer,
            learning_rate: p.learning_rate,
            weight_decay: p.weight_decay,
            batch_size: p.batch_size,
            epochs: p.epochs,
            seed,
            init,
        })
    }

    /// Flow configuration for vectors of width `input_dim`.
    pub fn flow_config(&self, input_dim: usize) -> Result<FlowConfig> {
        let f = &self.flow;
        let hidden = f.hidden_dim.unwrap_or(256);
        let mut c = if self.architecture()?.param_count() < 1000 {
            FlowConfig::small_target(input_dim, hidden)
        } else {
            FlowConfig::new(input_dim, hidden)
        };
        macro_rules! set {
            ($($field:ident),*) => {$( if let Some(v) = f.$field { c.$field = v; } )*};
        }
        set!(time_embed_dim, dropout, sigma, source_std, iterations, batch_size, learning_rate, weight_decay, beta1, beta2, eta_min, steps);
        if let Some(t) = &f.time_dist {
            c.time_dist = parse_time_dist(t)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// `uniform` or `beta:a,b`.
pub fn parse_time_dist(s: &str) -> Result<TimeDistribution> {
    if s == "uniform" {
        return Ok(TimeDistribution::Uniform);
    }
    let bad = || Error::Config(format!("time_dist must be `uniform` or `beta:a,b`, got `{s}`"));
    let rest = s.strip_prefix("beta:").ok_or_else(bad)?;
    let (a, b) = rest.split_once(',').ok_or_else(bad)?;
    Ok(TimeDistribution::Beta {
        a: a.trim().parse().map_err(|_| bad())?,
        b: b.trim().parse().map_err(|_| bad())?,
    })
}
