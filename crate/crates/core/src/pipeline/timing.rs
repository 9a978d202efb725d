use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::field::{Field, ParameterVector};
use crate::reduction::Reducer;
use crate::snapshots::DatasetConfig;
use crate::solvers::ProblemConfig;
use crate::stepper::StepperModel;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OfflineTimings {
    pub dataset_seconds: f64,
    pub reduction_seconds: f64,
    pub stepper_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub n_repeats: usize,
    /// Solver steps of the full high-fidelity run.
    pub hf_steps: usize,
    /// Stepper-predicted stored states covering the same horizon.
    pub rollout_steps: usize,
    pub hf_solve_seconds: f64,
    /// High-fidelity solve producing the seed window.
    pub seed_window_seconds: f64,
    /// Encode + rollout + decode.
    pub online_seconds: f64,
    /// Same at twice the rollout horizon.
    pub online_seconds_double: f64,
    pub linearity_ratio: f64,
    pub speedup: f64,
    pub speedup_with_seed: f64,
    pub offline: Option<OfflineTimings>,
    pub hardware: String,
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn timed<R>(repeats: usize, mut f: impl FnMut() -> Result<R>) -> Result<(f64, R)> {
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let t = Instant::now();
        let r = f()?;
        times.push(t.elapsed().as_secs_f64().max(1e-9));
        last = Some(r);
    }
    Ok((median(times), last.expect("at least one repeat")))
}

/// Median wall times of the full solve and of the reduced online stage
/// over the same horizon, measured on a single worker thread.
pub fn timing_report(
    problem: &ProblemConfig,
    dataset: &DatasetConfig,
    reducer: &dyn Reducer,
    stepper: &StepperModel,
    mu: &ParameterVector,
    n_repeats: usize,
    offline: Option<OfflineTimings>,
) -> Result<TimingReport> {
    if n_repeats < 3 {
        return Err(CoreError::config("timing needs at least 3 repeats"));
    }
    let s = dataset.stride;
    let xi = stepper.config.memory;
    let hf_steps = problem.n_steps();
    let stored = hf_steps / s;
    if stored <= xi {
        return Err(CoreError::config(format!(
            "horizon of {stored} stored steps is too short for memory {xi}"
        )));
    }
    let rollout_steps = stored - xi;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CoreError::config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let (hf, _) = timed(n_repeats, || problem.solve::<f64>(mu))?;
        let seed_problem = problem.with_steps(xi * s);
        let (seed_t, seed) = timed(n_repeats, || -> Result<Vec<Field>> {
            Ok(dataset.prepare(&seed_problem.solve::<f64>(mu)?).states)
        })?;
        let online = |n: usize| -> Result<f64> {
            let (t, _) = timed(n_repeats, || {
                let refs: Vec<&Field> = seed.iter().collect();
                let codes = reducer.encode(&refs)?;
                let r = stepper.rollout(&codes, mu, n)?;
                reducer.decode(&r.codes)
            })?;
            Ok(t)
        };
        let on = online(rollout_steps)?;
        let on2 = online(2 * rollout_steps)?;
        Ok(TimingReport {
            n_repeats,
            hf_steps,
            rollout_steps,
            hf_solve_seconds: hf,
            seed_window_seconds: seed_t,
            online_seconds: on,
            online_seconds_double: on2,
            linearity_ratio: on2 / on,
            speedup: hf / on,
            speedup_with_seed: hf / (on + seed_t),
            offline,
            hardware: format!(
                "{}-{}, {} logical cpus, measured on 1 thread",
                std::env::consts::ARCH,
                std::env::consts::OS,
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            ),
        })
    })
}
