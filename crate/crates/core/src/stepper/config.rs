use romforge_nn::{Activation, PenaltyEstimator};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::field::ProblemTag;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryEncoder {
    Lstm,
    Ccnn,
    Ffnn,
}

impl std::fmt::Display for MemoryEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemoryEncoder::Lstm => "lstm",
            MemoryEncoder::Ccnn => "ccnn",
            MemoryEncoder::Ffnn => "ffnn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    /// Windows per batch that enter the Jacobian penalty; `None` uses all.
    pub jacobian_windows: Option<usize>,
}

impl Default for StepperTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            jacobian_windows: Some(8),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepperConfig {
    /// Number of previous states ξ; the window holds ξ + 1 states.
    pub memory: usize,
    /// Steps ζ predicted per call.
    pub horizon: usize,
    pub n_latent: usize,
    pub n_params: usize,
    pub memory_encoder: MemoryEncoder,
    pub residual: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub embed_width: usize,
    pub param_layers: Vec<usize>,
    pub head_layers: Vec<usize>,
    pub lstm_width: usize,
    pub lstm_depth: usize,
    pub ccnn_channels: usize,
    pub ffnn_layers: Vec<usize>,
    pub hidden_activation: Activation,
    pub penalty_estimator: PenaltyEstimator,
    pub seed: u64,
    pub training: StepperTrainConfig,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            memory: 8,
            horizon: 4,
            n_latent: 4,
            n_params: 4,
            memory_encoder: MemoryEncoder::Ccnn,
            residual: true,
            beta1: 1e-6,
            beta2: 1e-6,
            embed_width: 16,
            param_layers: vec![16; 3],
            head_layers: vec![32; 3],
            lstm_width: 32,
            lstm_depth: 3,
            ccnn_channels: 16,
            ffnn_layers: vec![32; 2],
            hidden_activation: Activation::LeakyRelu,
            penalty_estimator: PenaltyEstimator::Exact,
            seed: 0,
            training: StepperTrainConfig::default(),
        }
    }
}

impl StepperConfig {
    /// Per-problem defaults for memory and regularization weights.
    pub fn for_problem(tag: ProblemTag, n_latent: usize) -> Self {
        let base = Self {
            n_latent,
            n_params: tag.n_params(),
            ..Self::default()
        };
        match tag {
            ProblemTag::Heat => Self { memory: 8, ..base },
            ProblemTag::Advection => Self {
                memory: 6,
                beta1: 1e-9,
                beta2: 1e-6,
                ..base
            },
            ProblemTag::Cavity => Self {
                memory: 8,
                beta1: 1e-6,
                beta2: 1e-10,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::config(format!("stepper.{m}")));
        if self.memory < 1 {
            return bad("memory must be at least 1");
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if self.n_latent < 1 || self.n_params < 1 {
            return bad("n_latent and n_params must be positive");
        }
        if !(self.beta1 >= 0.0 && self.beta1.is_finite()) || !(self.beta2 >= 0.0 && self.beta2.is_finite()) {
            return bad("beta1 and beta2 must be finite and non-negative");
        }
        if self.embed_width == 0
            || self.lstm_width == 0
            || self.ccnn_channels == 0
            || self.param_layers.contains(&0)
            || self.head_layers.contains(&0)
            || self.ffnn_layers.contains(&0)
        {
            return bad("layer widths must be positive");
        }
        if self.memory_encoder == MemoryEncoder::Lstm && self.lstm_depth == 0 {
            return bad("lstm_depth must be positive");
        }
        if self.param_layers.is_empty() {
            return bad("param_layers must not be empty");
        }
        let t = &self.training;
        if t.batch_size == 0 || !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("training.batch_size and training.learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&t.validation_fraction) {
            return bad("training.validation_fraction must lie in [0, 1)");
        }
        if t.jacobian_windows == Some(0) {
            return bad("training.jacobian_windows must be positive when set");
        }
        Ok(())
    }
}
