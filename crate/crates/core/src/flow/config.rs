use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Distribution of the interpolation time `t` during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeDistribution {
    Uniform,
    Beta { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub input_dim: usize,
    /// Trunk widths are `[hidden_dim, hidden_dim / 2, hidden_dim]`.
    pub hidden_dim: usize,
    pub time_embed_dim: usize,
    pub dropout: f64,
    /// Std of the Gaussian perturbation of the interpolant.
    pub sigma: f64,
    /// Std of the source distribution.
    pub source_std: f64,
    pub time_dist: TimeDistribution,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Floor of the cosine learning-rate schedule.
    pub eta_min: f64,
    /// RK4 steps used for sampling.
    pub steps: usize,
    /// 0 for an unconditional model.
    pub num_classes: usize,
}

impl FlowConfig {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            time_embed_dim: 64,
            dropout: 0.1,
            sigma: 0.001,
            source_std: 0.01,
            time_dist: TimeDistribution::Uniform,
            iterations: 30_000,
            batch_size: 8,
            learning_rate: 5e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.95,
            eta_min: 1e-6,
            steps: 100,
            num_classes: 0,
        }
    }

    /// Settings for very small targets: narrow time embedding, heavy dropout.
    pub fn small_target(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            time_embed_dim: 4,
            dropout: 0.4,
            ..Self::new(input_dim, hidden_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 {
            return fail("flow input_dim must be >= 1".into());
        }
        if self.hidden_dim < 2 {
            return fail(format!("flow hidden_dim must be >= 2, got {}", self.hidden_dim));
        }
        if self.time_embed_dim == 0 {
            return fail("time_embed_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 || self.source_std.is_nan() || self.source_std <= 0.0 {
            return fail("sigma and source_std must be > 0".into());
        }
        if let TimeDistribution::Beta { a, b } = self.time_dist {
            if !(a > 0.0 && b > 0.0) {
                return fail(format!("beta time distribution needs a, b > 0, got ({a}, {b})"));
            }
        }
        if self.iterations == 0 || self.steps == 0 || self.batch_size == 0 {
            return fail("iterations, steps and batch_size must be >= 1".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.eta_min < 0.0 || self.weight_decay < 0.0 {
            return fail("learning_rate must be > 0; eta_min and weight_decay >= 0".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flow config is always serializable")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("flow config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = FlowConfig::small_target(131, 256);
        c.time_dist = TimeDistribution::Beta { a: 2.0, b: 5.0 };
        c.num_classes = 3;
        assert_eq!(FlowConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(FlowConfig::new(3, 8).time_dist, TimeDistribution::Uniform);
        let uniform = FlowConfig::new(3, 8);
        assert_eq!(FlowConfig::from_text(&uniform.to_text()).unwrap(), uniform);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let base = FlowConfig::new(4, 8);
        for bad in [
            FlowConfig { sigma: 0.0, ..base.clone() },
            FlowConfig { source_std: -1.0, ..base.clone() },
            FlowConfig { iterations: 0, ..base.clone() },
            FlowConfig { steps: 0, ..base.clone() },
            FlowConfig { dropout: 1.0, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert!(FlowConfig::from_text("input_dim = 3\nbogus = 1").is_err());
    }
}
