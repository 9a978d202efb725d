use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::field::{Field, ParameterVector, Trajectory};
use crate::reduction::{encode_trajectory, field_mre_curve, mre_curve, reconstruct, ErrorCurve, Reducer};
use crate::stepper::StepperModel;

/// Where the latent trajectories under evaluation come from.
#[derive(Clone, Copy)]
pub enum LatentSource<'a> {
    /// Autoregressive rollout from the first `ξ + 1` encoded states.
    Stepper(&'a StepperModel),
    /// Encoded ground truth; high-fidelity error is pure reconstruction error.
    GroundTruth,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Stored-step indices for pointwise error fields; `None` selects the
    /// first, middle and last step.
    pub probes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutFailure {
    pub case: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub latent: ErrorCurve,
    pub high_fidelity: ErrorCurve,
    pub n_test: usize,
    pub probe_steps: Vec<usize>,
    pub probe_times: Vec<f64>,
    /// `|u - ũ|` per test case and probe step.
    pub abs_error: Vec<Vec<Field>>,
    pub failures: Vec<RolloutFailure>,
}

#[derive(Clone, Debug, Serialize)]
struct Summary<'a> {
    n_test: usize,
    time_averaged_mre: f64,
    time_averaged_mre_latent: f64,
    excluded_steps: &'a [usize],
    probe_steps: &'a [usize],
    rollout_failures: &'a [RolloutFailure],
}

impl EvalReport {
    /// `step,mre_latent,stderr_latent,mre_hf,stderr_hf`; cells of steps
    /// excluded from one of the curves are left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,mre_latent,stderr_latent,mre_hf,stderr_hf\n");
        let mut steps: Vec<usize> = self.latent.steps.iter().chain(&self.high_fidelity.steps).copied().collect();
        steps.sort_unstable();
        steps.dedup();
        let cell = |c: &ErrorCurve, n: usize| match c.steps.binary_search(&n) {
            Ok(k) => (format!("{:e}", c.mre[k]), format!("{:e}", c.stderr[k])),
            Err(_) => (String::new(), String::new()),
        };
        for n in steps {
            let (ml, sl) = cell(&self.latent, n);
            let (mh, sh) = cell(&self.high_fidelity, n);
            s.push_str(&format!("{n},{ml},{sl},{mh},{sh}\n"));
        }
        s
    }

    /// JSON summary; `time_averaged_mre` is the high-fidelity value.
    pub fn summary_json(&self) -> String {
        let s = Summary {
            n_test: self.n_test,
            time_averaged_mre: self.high_fidelity.time_averaged,
            time_averaged_mre_latent: self.latent.time_averaged,
            excluded_steps: &self.high_fidelity.excluded,
            probe_steps: &self.probe_steps,
            rollout_failures: &self.failures,
        };
        serde_json::to_string_pretty(&s).expect("summary serializes") + "\n"
    }

    /// Pointwise error fields as a model-container array
    /// `[case, probe, channel, y, x]` plus the probe steps and times.
    pub fn abs_error_file(&self) -> Result<romforge_nn::ModelFile> {
        let mut f = romforge_nn::ModelFile::new(serde_json::json!({ "kind": "abs_error" }));
        let first = self.abs_error.first().and_then(|c| c.first());
        let shape = match first {
            Some(fl) => vec![self.abs_error.len(), self.probe_steps.len(), fl.channels, fl.ny, fl.nx],
            None => vec![0, self.probe_steps.len(), 0, 0, 0],
        };
        let data = self.abs_error.iter().flatten().flat_map(|fl| fl.values.iter().copied()).collect();
        f.add_array("abs_error", shape, data)?;
        f.add_array("probe_steps", vec![self.probe_steps.len()], self.probe_steps.iter().map(|&s| s as f64).collect())?;
        f.add_array("probe_times", vec![self.probe_times.len()], self.probe_times.clone())?;
        Ok(f)
    }
}

#[derive(Clone, Debug)]
pub struct OnlinePrediction {
    pub trajectory: Trajectory,
    pub codes: Vec<Vec<f64>>,
    /// Index of the first non-finite state; later states are absent.
    pub failed_at: Option<usize>,
}

/// Encodes the seed window, rolls out `n_steps` latent states and decodes
/// the whole sequence (seed window included).
pub fn online_predict(
    reducer: &dyn Reducer,
    stepper: &StepperModel,
    mu: &ParameterVector,
    seed: &[Field],
    n_steps: usize,
    dt: f64,
) -> Result<OnlinePrediction> {
    if reducer.n_latent() != stepper.config.n_latent {
        return Err(CoreError::mismatch("latent dimension", reducer.n_latent(), stepper.config.n_latent));
    }
    for f in seed {
        reducer.check_field(f)?;
    }
    let refs: Vec<&Field> = seed.iter().collect();
    let codes = reducer.encode(&refs)?;
    let r = stepper.rollout(&codes, mu, n_steps)?;
    let states = reducer.decode(&r.codes)?;
    Ok(OnlinePrediction {
        trajectory: Trajectory {
            parameter: mu.clone(),
            dt,
            states,
        },
        codes: r.codes,
        failed_at: r.failed_at,
    })
}

fn probe_steps(opts: &EvalOptions, len: usize) -> Result<Vec<usize>> {
    let p = opts.probes.clone().unwrap_or_else(|| {
        let mut v = vec![0, (len - 1) / 2, len - 1];
        v.dedup();
        v
    });
    if let Some(&bad) = p.iter().find(|&&s| s >= len) {
        return Err(CoreError::config(format!("evaluation.probes: step {bad} beyond the {len} stored states")));
    }
    Ok(p)
}

struct CaseResult {
    latent_ref: Vec<Vec<f64>>,
    latent: Vec<Vec<f64>>,
    fields: Vec<Field>,
    failed_at: Option<usize>,
}

/// Latent and high-fidelity MRE curves over the test trajectories, which
/// must not share parameters with `train` when it is given.
pub fn evaluate(
    reducer: &dyn Reducer,
    source: LatentSource<'_>,
    test: &[&Trajectory],
    train: Option<&[&Trajectory]>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(CoreError::config("evaluation needs at least one test trajectory"));
    }
    if let Some(train) = train {
        for t in test {
            if train.iter().any(|s| s.parameter.values == t.parameter.values) {
                return Err(CoreError::config(format!(
                    "test parameter {:?} also appears in the training set",
                    t.parameter.values
                )));
            }
        }
    }
    let len = test[0].states.len();
    if test.iter().any(|t| t.states.len() != len) {
        return Err(CoreError::config("test trajectories must share their length"));
    }
    let probes = probe_steps(opts, len)?;

    let cases: Vec<CaseResult> = test
        .par_iter()
        .map(|t| -> Result<CaseResult> {
            let latent_ref = encode_trajectory(reducer, t)?.codes;
            match source {
                LatentSource::GroundTruth => Ok(CaseResult {
                    latent: latent_ref.clone(),
                    latent_ref,
                    fields: reconstruct(reducer, t)?,
                    failed_at: None,
                }),
                LatentSource::Stepper(s) => {
                    let w = s.config.memory + 1;
                    if len <= w {
                        return Err(CoreError::config(format!(
                            "test trajectories have {len} states; memory {} needs more than {w}",
                            s.config.memory
                        )));
                    }
                    let p = online_predict(reducer, s, &t.parameter, &t.states[..w], len - w, t.dt)?;
                    let (mut latent, mut fields) = (p.codes, p.trajectory.states);
                    let (nx, ny, c) = reducer.field_shape();
                    while latent.len() < len {
                        latent.push(vec![f64::NAN; reducer.n_latent()]);
                        fields.push(Field::from_values(nx, ny, c, vec![f64::NAN; nx * ny * c])?);
                    }
                    Ok(CaseResult {
                        latent_ref,
                        latent,
                        fields,
                        failed_at: p.failed_at,
                    })
                }
            }
        })
        .collect::<Result<_>>()?;

    let latent_ref: Vec<Vec<Vec<f64>>> = cases.iter().map(|c| c.latent_ref.clone()).collect();
    let latent: Vec<Vec<Vec<f64>>> = cases.iter().map(|c| c.latent.clone()).collect();
    let fields: Vec<Vec<Field>> = cases.iter().map(|c| c.fields.clone()).collect();
    let abs_error = test
        .iter()
        .zip(&fields)
        .map(|(t, f)| {
            probes
                .iter()
                .map(|&n| {
                    let (u, v) = (&t.states[n], &f[n]);
                    Field {
                        values: u.values.iter().zip(&v.values).map(|(a, b)| (a - b).abs()).collect(),
                        ..u.clone()
                    }
                })
                .collect()
        })
        .collect();
    let failures = cases
        .iter()
        .enumerate()
        .filter_map(|(case, c)| c.failed_at.map(|step| RolloutFailure { case, step }))
        .collect();
    Ok(EvalReport {
        latent: mre_curve(&latent_ref, &latent)?,
        high_fidelity: field_mre_curve(test, &fields)?,
        n_test: test.len(),
        probe_times: probes.iter().map(|&n| n as f64 * test[0].dt).collect(),
        probe_steps: probes,
        abs_error,
        failures,
    })
}
