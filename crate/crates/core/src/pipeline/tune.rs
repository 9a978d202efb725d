use serde::{Deserialize, Serialize};

use super::{offline_train, OfflineConfig};
use crate::error::{CoreError, Result};

/// Memory values the tuner steps through.
pub const SUPPORTED_MEMORY: [usize; 7] = [1, 2, 4, 6, 8, 12, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub n_latent: usize,
    pub horizon: usize,
    pub memory: usize,
    pub n_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    pub config: TuneConfig,
    /// Time-averaged high-fidelity MRE of the trained pipeline.
    pub validation_mre: f64,
    /// Time-averaged reconstruction MRE of the reducer alone.
    pub reconstruction_mre: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneState {
    pub current: TuneConfig,
    pub target: f64,
    pub history: Vec<TuneRecord>,
}

impl TuneState {
    pub fn from_config(cfg: &OfflineConfig, target: f64) -> Self {
        Self {
            current: TuneConfig {
                n_latent: cfg.reduction.n_latent,
                horizon: cfg.stepper.horizon,
                memory: cfg.stepper.memory,
                n_train: cfg.sampler.n_train,
            },
            target,
            history: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: TuneConfig,
    pub best_mre: f64,
    pub history: Vec<TuneRecord>,
    pub converged: bool,
}

/// Grows `N_l` while reconstruction error dominates (at least half the
/// total error); otherwise alternates doubling `N_train` and moving `ξ`
/// to the next supported value. `ζ` is left unchanged.
pub fn default_update(state: &TuneState, last: &TuneRecord) -> TuneConfig {
    let mut next = last.config;
    if last.reconstruction_mre >= 0.5 * last.validation_mre {
        next.n_latent += 1;
        return next;
    }
    let other_updates = state
        .history
        .windows(2)
        .filter(|w| w[0].config.n_latent == w[1].config.n_latent)
        .count();
    let bigger = SUPPORTED_MEMORY.iter().copied().find(|&m| m > next.memory);
    match (other_updates % 2, bigger) {
        (1, Some(m)) => next.memory = m,
        _ => next.n_train *= 2,
    }
    next
}

fn apply(base: &OfflineConfig, c: &TuneConfig) -> OfflineConfig {
    let mut cfg = base.clone();
    cfg.reduction.n_latent = c.n_latent;
    cfg.stepper.horizon = c.horizon;
    cfg.stepper.memory = c.memory;
    cfg.sampler.n_train = c.n_train;
    cfg
}

/// Repeats offline training, updating the configuration with `rule`,
/// until the error reaches the target or `budget` runs are spent.
/// Returns the configuration with the lowest recorded error.
pub fn offline_tune(
    base: &OfflineConfig,
    mut state: TuneState,
    rule: &dyn Fn(&TuneState, &TuneRecord) -> TuneConfig,
    budget: usize,
) -> Result<TuneOutcome> {
    if budget == 0 {
        return Err(CoreError::config("tuning budget must be at least 1"));
    }
    let mut converged = false;
    for _ in 0..budget {
        let r = offline_train(&apply(base, &state.current))?;
        let rec = TuneRecord {
            config: state.current,
            validation_mre: r.report.high_fidelity.time_averaged,
            reconstruction_mre: r.reconstruction.time_averaged,
        };
        state.history.push(rec.clone());
        if rec.validation_mre <= state.target {
            converged = true;
            break;
        }
        state.current = rule(&state, &rec);
    }
    let best = state
        .history
        .iter()
        .min_by(|a, b| a.validation_mre.total_cmp(&b.validation_mre))
        .expect("at least one run");
    Ok(TuneOutcome {
        best: best.config,
        best_mre: best.validation_mre,
        history: state.history.clone(),
        converged,
    })
}
