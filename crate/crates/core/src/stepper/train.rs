use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use romforge_nn::{accumulate, jacobian_penalty, Adam, AdamConfig, Differentiable, Gradients, Tensor};
use serde::{Deserialize, Serialize};

use super::model::{LatentScaling, StepperModel};
use crate::error::{CoreError, Result};
use crate::field::ParameterVector;
use crate::reduction::cae::epoch_order;
use crate::reduction::LatentTrajectory;

/// One teacher-forced training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainWindow {
    pub window: Vec<Vec<f64>>,
    pub parameter: ParameterVector,
    pub targets: Vec<Vec<f64>>,
    pub trajectory: usize,
    /// Index of the window's first state within its trajectory.
    pub start: usize,
}

/// All windows with unit stride: a trajectory with `L` codes yields
/// `L - ξ - ζ` windows.
pub fn make_windows(trajectories: &[LatentTrajectory], memory: usize, horizon: usize) -> Result<Vec<TrainWindow>> {
    let w = memory + 1;
    let mut out = Vec::new();
    for (ti, t) in trajectories.iter().enumerate() {
        if t.codes.len() < w + horizon {
            return Err(CoreError::config(format!(
                "trajectory {ti} has {} states; memory {memory} and horizon {horizon} need at least {}",
                t.codes.len(),
                w + horizon
            )));
        }
        for start in 0..=t.codes.len() - w - horizon {
            out.push(TrainWindow {
                window: t.codes[start..start + w].to_vec(),
                parameter: t.parameter.clone(),
                targets: t.codes[start + w..start + w + horizon].to_vec(),
                trajectory: ti,
                start,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct StepperLoss {
    pub total: f64,
    /// Mean over windows of `Σ_k ‖u^{n+k} - Ψ_k‖²`.
    pub data: f64,
    pub weight_decay: f64,
    /// Mean Jacobian norm (before weighting by β₂).
    pub penalty: f64,
    pub grads: Gradients<f64>,
}

fn input_batch(model: &StepperModel, windows: &[&TrainWindow]) -> Result<Tensor<f64>> {
    let d = model.net.input_width();
    let mut x = Vec::with_capacity(windows.len() * d);
    for w in windows {
        x.extend(model.input_row(&w.window, &w.parameter));
    }
    Ok(Tensor::new(vec![windows.len(), d], x)?)
}

fn residuals(model: &StepperModel, windows: &[&TrainWindow], r: &[f64]) -> Vec<f64> {
    let m = model.net.output_width();
    let mut out = Vec::with_capacity(r.len());
    for (b, w) in windows.iter().enumerate() {
        let pred = model.outputs_to_states(&r[b * m..(b + 1) * m], &w.window[model.config.memory]);
        for (p, t) in pred.iter().zip(&w.targets) {
            out.extend(t.iter().zip(p).map(|(t, p)| t - p));
        }
    }
    out
}

/// Regularized loss and its exact parameter gradient. The Jacobian term
/// uses the first `penalty_windows` windows of the batch (all if `None`).
pub fn stepper_loss(
    model: &StepperModel,
    windows: &[&TrainWindow],
    penalty_windows: Option<usize>,
    seed: u64,
) -> Result<StepperLoss> {
    if windows.is_empty() {
        return Err(CoreError::config("stepper loss needs a nonempty batch"));
    }
    let cfg = &model.config;
    let b = windows.len();
    let x = input_batch(model, windows)?;
    let (r, tape) = model.net.forward_tape(&x)?;
    let res = residuals(model, windows, r.data());
    let data = res.iter().map(|e| e * e).sum::<f64>() / b as f64;
    let nl = cfg.n_latent;
    let dr: Vec<f64> = res
        .iter()
        .enumerate()
        .map(|(k, e)| -2.0 * e * model.scaling.out_scale[k % nl] / b as f64)
        .collect();
    let (mut grads, _) = model.net.backward_tape(&tape, &Tensor::new(r.shape().to_vec(), dr)?)?;

    let weight_decay = cfg.beta1 * model.net.sum_sq_params();
    if cfg.beta1 > 0.0 {
        for (g, p) in grads.iter_mut().zip(model.net.param_blocks()) {
            g.iter_mut().zip(p).for_each(|(g, p)| *g += 2.0 * cfg.beta1 * p);
        }
    }

    let mut penalty = 0.0;
    if cfg.beta2 > 0.0 {
        let j = penalty_windows.unwrap_or(b).min(b);
        let xj = x.slice_batch(0, j);
        let p = jacobian_penalty(&model.net, &xj, 0..model.net.window_width(), cfg.penalty_estimator, seed)?;
        penalty = p.mean;
        accumulate(&mut grads, &p.grads, cfg.beta2);
    }
    let total = data + weight_decay + cfg.beta2 * penalty;
    if !total.is_finite() {
        return Err(CoreError::NonFinite("stepper loss".into()));
    }
    Ok(StepperLoss {
        total,
        data,
        weight_decay,
        penalty,
        grads,
    })
}

/// Mean data loss over `windows` in chunks, without gradients.
pub fn data_loss(model: &StepperModel, windows: &[&TrainWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in windows.chunks(512) {
        let x = input_batch(model, chunk)?;
        let (r, _) = model.net.forward_tape(&x)?;
        total += residuals(model, chunk, r.data()).iter().map(|e| e * e).sum::<f64>();
    }
    Ok(total / windows.len() as f64)
}

/// Mean squared error of the first predicted state.
pub fn one_step_error(model: &StepperModel, windows: &[&TrainWindow]) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        let p = model.predict(&w.window, &w.parameter)?;
        total += p[0].iter().zip(&w.targets[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / windows.len().max(1) as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepperTraining {
    /// Entry 0: initial model on the epoch-0 batches; entry `e`: mean batch
    /// loss while training epoch `e - 1`.
    pub train_loss: Vec<f64>,
    /// Data loss on the validation windows after each epoch (training
    /// windows when the validation split is empty).
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub n_train_windows: usize,
    pub n_validation_windows: usize,
}

/// Splits windows into (train, validation) by a seeded shuffle.
pub fn split_windows(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
    let n_val = if n >= 2 { ((n as f64 * fraction).round() as usize).min(n - 1) } else { 0 };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Fits the latent scaling on `trajectories`, then trains with Adam on
/// teacher-forced windows and returns the best-validation checkpoint.
pub fn train_stepper(
    mut model: StepperModel,
    trajectories: &[LatentTrajectory],
) -> Result<(StepperModel, StepperTraining)> {
    model.config.validate()?;
    let cfg = model.config.clone();
    let t = &cfg.training;
    model.scaling = LatentScaling::fit(trajectories, cfg.n_latent, cfg.residual);
    let windows = make_windows(trajectories, cfg.memory, cfg.horizon)?;
    let (fit, val) = split_windows(windows.len(), t.validation_fraction, cfg.seed);
    let fit: Vec<&TrainWindow> = fit.iter().map(|&i| &windows[i]).collect();
    let val: Vec<&TrainWindow> = val.iter().map(|&i| &windows[i]).collect();
    let monitor = if val.is_empty() { &fit } else { &val };

    let batches = |epoch: usize| -> Vec<Vec<&TrainWindow>> {
        epoch_order(cfg.seed, epoch, fit.len())
            .chunks(t.batch_size)
            .map(|c| c.iter().map(|&i| fit[i]).collect())
            .collect()
    };
    let penalty_seed = |epoch: usize, k: usize| cfg.seed ^ ((epoch as u64) << 32) ^ k as u64;

    let mut history = StepperTraining {
        n_train_windows: fit.len(),
        n_validation_windows: val.len(),
        ..Default::default()
    };
    let b0 = batches(0);
    let mut init = 0.0;
    for (k, b) in b0.iter().enumerate() {
        init += stepper_loss(&model, b, t.jacobian_windows, penalty_seed(0, k))?.total;
    }
    history.train_loss.push(init / b0.len() as f64);

    let mut best = (data_loss(&model, monitor)?, model.clone());
    let mut adam = Adam::new(AdamConfig {
        learning_rate: t.learning_rate,
        ..AdamConfig::default()
    });
    for epoch in 0..t.epochs {
        let bs = batches(epoch);
        let mut sum = 0.0;
        for (k, b) in bs.iter().enumerate() {
            let l = stepper_loss(&model, b, t.jacobian_windows, penalty_seed(epoch, k))?;
            sum += l.total;
            adam.step(model.net.param_blocks_mut(), &l.grads);
        }
        history.train_loss.push(sum / bs.len() as f64);
        let v = data_loss(&model, monitor)?;
        if !v.is_finite() {
            return Err(CoreError::NonFinite(format!("stepper validation loss at epoch {epoch}")));
        }
        history.validation_loss.push(v);
        if v < best.0 {
            best = (v, model.clone());
            history.best_epoch = epoch + 1;
        }
    }
    Ok((best.1, history))
}
