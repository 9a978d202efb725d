use romforge_nn::{Differentiable, ModelFile, Tensor};
use serde::{Deserialize, Serialize};

use super::config::StepperConfig;
use super::net::StepperNet;
use crate::error::{CoreError, Result};
use crate::field::ParameterVector;
use crate::reduction::LatentTrajectory;

/// Affine maps between latent space and network coordinates.
///
/// Inputs enter as `(u - shift) / in_scale`; outputs leave as
/// `out_scale * R` (plus `u^n` in residual mode).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentScaling {
    pub shift: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_scale: Vec<f64>,
}

fn positive_or_one(v: f64) -> f64 {
    if v > 1e-300 && v.is_finite() {
        v
    } else {
        1.0
    }
}

impl LatentScaling {
    pub fn identity(n: usize) -> Self {
        Self {
            shift: vec![0.0; n],
            in_scale: vec![1.0; n],
            out_scale: vec![1.0; n],
        }
    }

    /// Per-coordinate mean and standard deviation of all codes for the
    /// inputs; root-mean-square of the one-step increments (residual mode)
    /// or of the states for the outputs.
    pub fn fit(trajectories: &[LatentTrajectory], n_latent: usize, residual: bool) -> Self {
        let mut sum = vec![0.0; n_latent];
        let mut sq = vec![0.0; n_latent];
        let mut out = vec![0.0; n_latent];
        let (mut n, mut m) = (0usize, 0usize);
        for t in trajectories {
            for (k, c) in t.codes.iter().enumerate() {
                for j in 0..n_latent {
                    sum[j] += c[j];
                    sq[j] += c[j] * c[j];
                }
                n += 1;
                if residual {
                    if k > 0 {
                        for j in 0..n_latent {
                            let d = c[j] - t.codes[k - 1][j];
                            out[j] += d * d;
                        }
                        m += 1;
                    }
                } else {
                    for j in 0..n_latent {
                        out[j] += c[j] * c[j];
                    }
                    m += 1;
                }
            }
        }
        let nf = n.max(1) as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let in_scale = (0..n_latent)
            .map(|j| positive_or_one((sq[j] / nf - shift[j] * shift[j]).max(0.0).sqrt()))
            .collect();
        let out_scale = out.iter().map(|o| positive_or_one((o / m.max(1) as f64).sqrt())).collect();
        Self {
            shift,
            in_scale,
            out_scale,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepperModel {
    pub config: StepperConfig,
    pub net: StepperNet<f64>,
    pub scaling: LatentScaling,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Seed window followed by the predicted states.
    pub codes: Vec<Vec<f64>>,
    pub predict_calls: usize,
    /// Index (counting the seed window) of the first non-finite state.
    pub failed_at: Option<usize>,
}

impl Rollout {
    pub fn failed(&self) -> bool {
        self.failed_at.is_some()
    }
}

impl StepperModel {
    pub fn new(config: StepperConfig) -> Result<Self> {
        let net = StepperNet::new(&config)?;
        let scaling = LatentScaling::identity(config.n_latent);
        Ok(Self { config, net, scaling })
    }

    fn check_window(&self, window: &[Vec<f64>], mu: &ParameterVector) -> Result<()> {
        let c = &self.config;
        if window.len() != c.memory + 1 {
            return Err(CoreError::mismatch("stepper window length", c.memory + 1, window.len()));
        }
        if let Some(bad) = window.iter().find(|s| s.len() != c.n_latent) {
            return Err(CoreError::mismatch("latent state dimension", c.n_latent, bad.len()));
        }
        if mu.values.len() != c.n_params {
            return Err(CoreError::mismatch("parameter dimension", c.n_params, mu.values.len()));
        }
        Ok(())
    }

    /// Network input row: scaled window followed by the scaled parameter.
    pub fn input_row(&self, window: &[Vec<f64>], mu: &ParameterVector) -> Vec<f64> {
        let s = &self.scaling;
        let mut row = Vec::with_capacity(self.net.input_width());
        for state in window {
            row.extend(state.iter().enumerate().map(|(j, &u)| (u - s.shift[j]) / s.in_scale[j]));
        }
        row.extend(mu.scaled());
        row
    }

    /// Maps raw network outputs `R` (one row of `ζ·N_l`) to latent states.
    pub fn outputs_to_states(&self, r: &[f64], last: &[f64]) -> Vec<Vec<f64>> {
        let nl = self.config.n_latent;
        r.chunks(nl)
            .map(|rk| {
                rk.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let step = self.scaling.out_scale[j] * v;
                        if self.config.residual {
                            last[j] + step
                        } else {
                            step
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Predicts the next ζ states from a window of ξ + 1 states.
    pub fn predict(&self, window: &[Vec<f64>], mu: &ParameterVector) -> Result<Vec<Vec<f64>>> {
        self.check_window(window, mu)?;
        let x = Tensor::new(vec![1, self.net.input_width()], self.input_row(window, mu))?;
        let (r, _) = self.net.forward_tape(&x)?;
        Ok(self.outputs_to_states(r.data(), &window[self.config.memory]))
    }

    /// Autoregressive rollout producing exactly `n_steps` new states.
    pub fn rollout(&self, seed: &[Vec<f64>], mu: &ParameterVector, n_steps: usize) -> Result<Rollout> {
        if n_steps == 0 {
            return Err(CoreError::config("rollout needs n_steps >= 1"));
        }
        self.check_window(seed, mu)?;
        let w = self.config.memory + 1;
        let mut codes = seed.to_vec();
        let mut calls = 0;
        while codes.len() < w + n_steps {
            let next = match self.predict(&codes[codes.len() - w..], mu) {
                Ok(n) => n,
                Err(CoreError::Nn(romforge_nn::NnError::NonFinite { .. })) => {
                    let at = codes.len();
                    return Ok(Rollout {
                        codes,
                        predict_calls: calls + 1,
                        failed_at: Some(at),
                    });
                }
                Err(e) => return Err(e),
            };
            calls += 1;
            for s in next.into_iter().take(w + n_steps - codes.len()) {
                if !s.iter().all(|v| v.is_finite()) {
                    let at = codes.len();
                    return Ok(Rollout {
                        codes,
                        predict_calls: calls,
                        failed_at: Some(at),
                    });
                }
                codes.push(s);
            }
        }
        Ok(Rollout {
            codes,
            predict_calls: calls,
            failed_at: None,
        })
    }

    pub fn to_model_file(&self, training: Option<&serde_json::Value>) -> ModelFile {
        let meta = serde_json::json!({
            "kind": "stepper",
            "config": self.config,
            "scaling": self.scaling,
            "training": training.cloned().unwrap_or(serde_json::Value::Null),
        });
        let mut f = ModelFile::new(meta);
        for (name, b) in ["embed", "memory", "param", "head"].iter().zip(self.net.branches()) {
            f.add_network(name, b);
        }
        f
    }

    pub fn from_model_file(f: &ModelFile) -> Result<Self> {
        if f.meta.get("kind").and_then(|k| k.as_str()) != Some("stepper") {
            return Err(CoreError::Format("model file does not hold a stepper".into()));
        }
        let field = |k: &str| f.meta.get(k).cloned().ok_or_else(|| CoreError::Format(format!("stepper manifest lacks {k}")));
        let config: StepperConfig =
            serde_json::from_value(field("config")?).map_err(|e| CoreError::Format(e.to_string()))?;
        let scaling: LatentScaling =
            serde_json::from_value(field("scaling")?).map_err(|e| CoreError::Format(e.to_string()))?;
        let mut model = Self::new(config)?;
        for (name, b) in ["embed", "memory", "param", "head"].iter().zip(model.net.branches_mut()) {
            let loaded = f.network(name)?;
            if loaded.specs() != b.specs() {
                return Err(CoreError::Format(format!("stepper branch {name} does not match its configuration")));
            }
            *b = loaded;
        }
        if scaling.shift.len() != model.config.n_latent {
            return Err(CoreError::Format("stepper scaling has the wrong width".into()));
        }
        model.scaling = scaling;
        Ok(model)
    }
}
