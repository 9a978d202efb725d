use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use romforge_core::io::write_atomic;
use romforge_core::pipeline::{
    evaluate, fit_reduction, fit_stepper, generate_dataset, online_predict, timing_report, EvalReport, LatentSource,
    OfflineConfig, OfflineTimings, ReductionMethod,
};
use romforge_core::reduction::{load_reducer, mre_curve, reconstruction_error, CaeTraining, ErrorCurve, Reducer};
use romforge_core::snapshots::{load_dataset, save_dataset, SnapshotSet};
use romforge_core::stepper::{StepperModel, StepperTraining};
use romforge_nn::ModelFile;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

/// Output file names inside the output directory.
pub mod files {
    pub const DATASET: &str = "dataset.romds";
    pub const PARAMETERS: &str = "parameters.csv";
    pub const STEPPER: &str = "stepper.romnn";
    pub const STEPPER_LOSS: &str = "stepper_loss.csv";
    pub const CAE_LOSS: &str = "cae_loss.csv";
    pub const EVAL_CSV: &str = "eval.csv";
    pub const EVAL_SUMMARY: &str = "eval_summary.json";
    pub const ABS_ERROR: &str = "abs_error.romnn";
    pub const TIMING: &str = "timing.json";
    /// Wall-clock times of offline stages; the only output that varies
    /// between identical runs.
    pub const TIMING_OFFLINE: &str = "timing_offline.json";
    pub const ROLLOUT_LATENT: &str = "rollout_latent.csv";
    pub const ROLLOUT_ERROR: &str = "rollout_error.csv";
    pub const ROLLOUT_FIELDS: &str = "rollout_fields.romnn";

    pub fn reducer(method: super::ReductionMethod) -> String {
        format!("{method}.romnn")
    }

    pub fn reducer_error(method: super::ReductionMethod) -> String {
        format!("{method}_error.csv")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Cae,
    Pod,
    Stepper,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    Memory,
    Beta1,
    Beta2,
    Ntrain,
    Residual,
    Latentdim,
    Method,
}

/// Validated configuration plus the output directory.
pub struct Context {
    pub run: RunConfig,
    pub offline: OfflineConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        let mut run = RunConfig::load(config)?;
        run.apply_seed(seed)?;
        if let Some(o) = out {
            run.evaluation.output_dir = o;
        }
        let offline = run.offline()?;
        let out = run.evaluation.output_dir.clone();
        Ok(Self { run, offline, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", self.out.display())))?;
        write_atomic(&self.path(name), bytes)?;
        Ok(())
    }

    fn write_model(&self, name: &str, f: &ModelFile) -> Result<(), CliError> {
        self.write(name, &f.to_bytes()?)
    }

    fn read_model(&self, name: &str, what: &str) -> Result<ModelFile, CliError> {
        let p = self.path(name);
        if !p.exists() {
            return Err(CliError::Validation(format!(
                "{what} {} not found; run the corresponding train stage first",
                p.display()
            )));
        }
        Ok(ModelFile::read(&p)?)
    }

    /// Loads the dataset and checks it was generated from this config.
    pub fn dataset(&self) -> Result<SnapshotSet, CliError> {
        let p = self.path(files::DATASET);
        if !p.exists() {
            return Err(CliError::Validation(format!(
                "dataset {} not found; run `romforge generate` first",
                p.display()
            )));
        }
        let set = load_dataset(&p)?;
        let c = &self.offline;
        let checks = [
            ("problem.tag", set.tag.as_str().to_string(), c.problem.tag().as_str().to_string()),
            ("problem.stride", set.stride.to_string(), c.dataset.stride.to_string()),
            ("dataset.n_train", set.n_train.to_string(), c.sampler.n_train.to_string()),
            ("dataset.n_test", set.n_test.to_string(), c.sampler.n_test.to_string()),
            ("dataset.seed", set.seed.to_string(), c.sampler.seed.to_string()),
        ];
        for (key, got, want) in checks {
            if got != want {
                return Err(CliError::Validation(format!(
                    "dataset mismatch in {key}: dataset has {got}, config has {want}"
                )));
            }
        }
        Ok(set)
    }

    pub fn reducer(&self, set: &SnapshotSet) -> Result<Box<dyn Reducer>, CliError> {
        let m = self.offline.reduction.method;
        let r = load_reducer(&self.read_model(&files::reducer(m), "reduction model")?)?;
        r.check_dataset(set)?;
        if r.n_latent() != self.offline.reduction.n_latent {
            return Err(CliError::Validation(format!(
                "model mismatch in reduction.n_latent: model has {}, config has {}",
                r.n_latent(),
                self.offline.reduction.n_latent
            )));
        }
        Ok(r)
    }

    pub fn stepper(&self, reducer: &dyn Reducer) -> Result<StepperModel, CliError> {
        let s = StepperModel::from_model_file(&self.read_model(files::STEPPER, "stepper model")?)?;
        if s.config.n_latent != reducer.n_latent() {
            return Err(CliError::Validation(format!(
                "model mismatch in n_latent: stepper has {}, reduction model has {}",
                s.config.n_latent,
                reducer.n_latent()
            )));
        }
        if s.config.n_params != self.offline.problem.tag().n_params() {
            return Err(CliError::Validation("model mismatch in parameter dimension".into()));
        }
        Ok(s)
    }

    fn record_offline_time(&self, key: &str, seconds: f64) -> Result<(), CliError> {
        let p = self.path(files::TIMING_OFFLINE);
        let mut v: Value = std::fs::read(&p)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_else(|| json!({}));
        v[key] = json!(seconds);
        self.write(files::TIMING_OFFLINE, serde_json::to_string_pretty(&v).unwrap().as_bytes())
    }
}

fn curve_csv(c: &ErrorCurve) -> String {
    c.to_csv()
}

fn cae_loss_csv(h: &CaeTraining) -> String {
    loss_csv(&h.train_loss, &h.validation_loss)
}

fn stepper_loss_csv(h: &StepperTraining) -> String {
    loss_csv(&h.train_loss, &h.validation_loss)
}

/// Row `e` holds the training loss entry `e` and the validation loss
/// measured after epoch `e` (empty for the initial row).
fn loss_csv(train: &[f64], val: &[f64]) -> String {
    let mut s = String::from("epoch,train_loss,validation_loss\n");
    for (e, t) in train.iter().enumerate() {
        let v = if e == 0 { String::new() } else { val.get(e - 1).map(|v| format!("{v:e}")).unwrap_or_default() };
        s.push_str(&format!("{e},{t:e},{v}\n"));
    }
    s
}

pub fn cmd_generate(ctx: &Context) -> Result<(), CliError> {
    let t = Instant::now();
    let progress = |k: usize, n: usize| eprintln!("generate: trajectory {} of {n} solved", k + 1);
    let set = generate_dataset(&ctx.offline, Some(&progress))?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    save_dataset(&set, &ctx.path(files::DATASET))?;
    ctx.write(files::PARAMETERS, set.parameter_csv().as_bytes())?;
    ctx.record_offline_time("dataset_seconds", t.elapsed().as_secs_f64())?;
    println!(
        "wrote {} ({} train + {} test trajectories, {} stored steps)",
        ctx.path(files::DATASET).display(),
        set.n_train,
        set.n_test,
        set.stored_steps()
    );
    Ok(())
}

fn train_reduction(ctx: &Context, set: &SnapshotSet, method: ReductionMethod) -> Result<Box<dyn Reducer>, CliError> {
    let t = Instant::now();
    let rc = romforge_core::pipeline::ReductionConfig {
        method,
        ..ctx.offline.reduction.clone()
    };
    let (r, hist) = fit_reduction(set, &rc)?;
    ctx.record_offline_time(&format!("{method}_seconds"), t.elapsed().as_secs_f64())?;
    ctx.write_model(&files::reducer(method), &r.to_model_file()?)?;
    let curve = reconstruction_error(r.as_ref(), &set.test())?;
    ctx.write(&files::reducer_error(method), curve_csv(&curve).as_bytes())?;
    if let Some(h) = hist {
        ctx.write(files::CAE_LOSS, cae_loss_csv(&h).as_bytes())?;
    }
    println!("{method}: time-averaged reconstruction MRE {:.4e}", curve.time_averaged);
    Ok(r)
}

fn train_stepper_stage(ctx: &Context, set: &SnapshotSet, reducer: &dyn Reducer) -> Result<StepperModel, CliError> {
    let t = Instant::now();
    let (s, h) = fit_stepper(reducer, set, &ctx.offline.stepper_config())?;
    ctx.record_offline_time("stepper_seconds", t.elapsed().as_secs_f64())?;
    let meta = serde_json::to_value(&h).map_err(|e| CliError::Runtime(e.to_string()))?;
    ctx.write_model(files::STEPPER, &s.to_model_file(Some(&meta)))?;
    ctx.write(files::STEPPER_LOSS, stepper_loss_csv(&h).as_bytes())?;
    println!(
        "stepper: {} training windows, best epoch {}, validation loss {:.4e}",
        h.n_train_windows,
        h.best_epoch,
        h.validation_loss.get(h.best_epoch.saturating_sub(1)).copied().unwrap_or(f64::NAN)
    );
    Ok(s)
}

fn write_eval(ctx: &Context, report: &EvalReport) -> Result<(), CliError> {
    ctx.write(files::EVAL_CSV, report.to_csv().as_bytes())?;
    ctx.write(files::EVAL_SUMMARY, report.summary_json().as_bytes())?;
    ctx.write_model(files::ABS_ERROR, &report.abs_error_file()?)?;
    println!(
        "evaluation on {} test cases: time-averaged MRE {:.4e} (latent {:.4e}){}",
        report.n_test,
        report.high_fidelity.time_averaged,
        report.latent.time_averaged,
        if report.failures.is_empty() {
            String::new()
        } else {
            format!(", {} rollouts diverged", report.failures.len())
        }
    );
    Ok(())
}

fn run_eval(
    ctx: &Context,
    set: &SnapshotSet,
    reducer: &dyn Reducer,
    source: LatentSource<'_>,
) -> Result<EvalReport, CliError> {
    set.assert_disjoint()?;
    Ok(evaluate(reducer, source, &set.test(), Some(&set.train()), &ctx.offline.eval)?)
}

pub fn cmd_train(ctx: &Context, stage: Stage) -> Result<(), CliError> {
    let set = ctx.dataset()?;
    let method = ctx.offline.reduction.method;
    match stage {
        Stage::Pod => {
            train_reduction(ctx, &set, ReductionMethod::Pod)?;
        }
        Stage::Cae => {
            train_reduction(ctx, &set, ReductionMethod::Cae)?;
        }
        Stage::Stepper => {
            let r = ctx.reducer(&set)?;
            train_stepper_stage(ctx, &set, r.as_ref())?;
        }
        Stage::All => {
            let r = train_reduction(ctx, &set, method)?;
            let s = train_stepper_stage(ctx, &set, r.as_ref())?;
            let report = run_eval(ctx, &set, r.as_ref(), LatentSource::Stepper(&s))?;
            write_eval(ctx, &report)?;
        }
    }
    Ok(())
}

pub fn cmd_evaluate(ctx: &Context, ground_truth: bool) -> Result<(), CliError> {
    let set = ctx.dataset()?;
    let r = ctx.reducer(&set)?;
    let report = if ground_truth {
        run_eval(ctx, &set, r.as_ref(), LatentSource::GroundTruth)?
    } else {
        let s = ctx.stepper(r.as_ref())?;
        run_eval(ctx, &set, r.as_ref(), LatentSource::Stepper(&s))?
    };
    write_eval(ctx, &report)
}

pub fn cmd_rollout(ctx: &Context, case: usize, n_steps: Option<usize>) -> Result<(), CliError> {
    let set = ctx.dataset()?;
    let r = ctx.reducer(&set)?;
    let s = ctx.stepper(r.as_ref())?;
    let test = set.test();
    let t = test.get(case).ok_or_else(|| {
        CliError::Validation(format!("--case {case} out of range: the dataset has {} test cases", test.len()))
    })?;
    let w = s.config.memory + 1;
    let n = n_steps.unwrap_or(t.states.len().saturating_sub(w));
    if n == 0 {
        return Err(CliError::Validation("rollout needs at least one step".into()));
    }
    let p = online_predict(r.as_ref(), &s, &t.parameter, &t.states[..w], n, t.dt)?;
    let mut latent = String::from("step,time");
    for j in 0..s.config.n_latent {
        latent.push_str(&format!(",z{j}"));
    }
    latent.push('\n');
    for (k, c) in p.codes.iter().enumerate() {
        latent.push_str(&format!("{k},{:e}", k as f64 * t.dt));
        for v in c {
            latent.push_str(&format!(",{v:e}"));
        }
        latent.push('\n');
    }
    ctx.write(files::ROLLOUT_LATENT, latent.as_bytes())?;

    let states = &p.trajectory.states;
    let mut fields = ModelFile::new(json!({"kind": "rollout", "case": case, "parameter": t.parameter.values}));
    if let Some(f0) = states.first() {
        let data = states.iter().flat_map(|f| f.values.iter().copied()).collect();
        fields.add_array("fields", vec![states.len(), f0.channels, f0.ny, f0.nx], data)?;
    }
    ctx.write_model(files::ROLLOUT_FIELDS, &fields)?;

    let k = states.len().min(t.states.len());
    let reference: Vec<Vec<&[f64]>> = vec![t.states[..k].iter().map(|f| f.values.as_slice()).collect()];
    let approx: Vec<Vec<&[f64]>> = vec![states[..k].iter().map(|f| f.values.as_slice()).collect()];
    let curve = mre_curve(&reference, &approx)?;
    ctx.write(files::ROLLOUT_ERROR, curve.to_csv().as_bytes())?;
    match p.failed_at {
        Some(step) => println!("rollout diverged at step {step}; partial output written"),
        None => println!(
            "rollout of {n} steps for test case {case}: time-averaged MRE {:.4e} over the overlap with the dataset",
            curve.time_averaged
        ),
    }
    Ok(())
}

pub fn cmd_timing(ctx: &Context) -> Result<(), CliError> {
    let set = ctx.dataset()?;
    let r = ctx.reducer(&set)?;
    let s = ctx.stepper(r.as_ref())?;
    let mu = &set.test()[0].parameter;
    let offline: Option<OfflineTimings> = std::fs::read(ctx.path(files::TIMING_OFFLINE))
        .ok()
        .and_then(|b| serde_json::from_slice::<Value>(&b).ok())
        .map(|v| {
            let g = |k: &str| v.get(k).and_then(Value::as_f64).unwrap_or(0.0);
            let method = ctx.offline.reduction.method;
            OfflineTimings {
                dataset_seconds: g("dataset_seconds"),
                reduction_seconds: g(&format!("{method}_seconds")),
                stepper_seconds: g("stepper_seconds"),
            }
        });
    let rep = timing_report(
        &ctx.offline.problem,
        &ctx.offline.dataset,
        r.as_ref(),
        &s,
        mu,
        ctx.run.evaluation.timing_repeats,
        offline,
    )?;
    ctx.write(files::TIMING, (serde_json::to_string_pretty(&rep).unwrap() + "\n").as_bytes())?;
    println!("high-fidelity solve ({} steps)   {:>12.6} s", rep.hf_steps, rep.hf_solve_seconds);
    println!("seed window solve                {:>12.6} s", rep.seed_window_seconds);
    println!("encode+rollout+decode ({} steps) {:>12.6} s", rep.rollout_steps, rep.online_seconds);
    println!("speedup                          {:>12.3}", rep.speedup);
    println!("speedup including seed window    {:>12.3}", rep.speedup_with_seed);
    Ok(())
}

/// Parses `a,b,c` with integer ranges `lo..hi` (inclusive) allowed.
pub fn parse_values(spec: &str) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = item.split_once("..") {
            let (lo, hi): (usize, usize) = match (a.trim().parse(), b.trim().parse()) {
                (Ok(lo), Ok(hi)) if lo <= hi => (lo, hi),
                _ => return Err(CliError::Validation(format!("--values: bad range {item}"))),
            };
            out.extend((lo..=hi).map(|v| v.to_string()));
        } else {
            out.push(item.to_string());
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation("--values must list at least one value".into()));
    }
    Ok(out)
}

fn variant(base: &RunConfig, axis: SweepAxis, value: &str) -> Result<RunConfig, CliError> {
    let bad = || CliError::Validation(format!("--values: {value} is not valid for axis {axis:?}"));
    let int = || value.parse::<usize>().map_err(|_| bad());
    let float = || value.parse::<f64>().map_err(|_| bad());
    let mut c = base.clone();
    match axis {
        SweepAxis::Memory => c.stepper.memory = int()?,
        SweepAxis::Beta1 => c.stepper.beta1 = float()?,
        SweepAxis::Beta2 => c.stepper.beta2 = float()?,
        SweepAxis::Ntrain => c.dataset.n_train = int()?,
        SweepAxis::Latentdim => c.reduction.n_latent = int()?,
        SweepAxis::Residual => {
            c.stepper.residual = match value {
                "on" | "true" | "1" => true,
                "off" | "false" | "0" => false,
                _ => return Err(bad()),
            }
        }
        SweepAxis::Method => {
            c.reduction.method = match value {
                "pod" => ReductionMethod::Pod,
                "cae" => ReductionMethod::Cae,
                _ => return Err(bad()),
            }
        }
    }
    Ok(c)
}

struct Variant {
    value: String,
    result: Result<ErrorCurve, CliError>,
}

fn run_variant(cfg: &OfflineConfig, shared: Option<&SnapshotSet>, reconstruction_only: bool) -> Result<ErrorCurve, CliError> {
    let owned;
    let set = match shared {
        Some(s) => s,
        None => {
            owned = generate_dataset(cfg, None)?;
            &owned
        }
    };
    let (r, _) = fit_reduction(set, &cfg.reduction)?;
    set.assert_disjoint()?;
    let report = if reconstruction_only {
        evaluate(r.as_ref(), LatentSource::GroundTruth, &set.test(), Some(&set.train()), &cfg.eval)?
    } else {
        let (s, _) = fit_stepper(r.as_ref(), set, &cfg.stepper_config())?;
        evaluate(r.as_ref(), LatentSource::Stepper(&s), &set.test(), Some(&set.train()), &cfg.eval)?
    };
    Ok(report.high_fidelity)
}

/// One variant per value; failures are recorded and the sweep continues.
pub fn cmd_sweep(ctx: &Context, axis: SweepAxis, values: &str, reconstruction_only: bool) -> Result<(), CliError> {
    let values = parse_values(values)?;
    let configs: Vec<(String, OfflineConfig)> = values
        .iter()
        .map(|v| Ok((v.clone(), variant(&ctx.run, axis, v)?.offline()?)))
        .collect::<Result<_, CliError>>()?;
    let shared = if axis == SweepAxis::Ntrain {
        None
    } else if ctx.path(files::DATASET).exists() {
        Some(ctx.dataset()?)
    } else {
        Some(generate_dataset(&ctx.offline, None)?)
    };
    let results: Vec<Variant> = configs
        .par_iter()
        .map(|(v, c)| Variant {
            value: v.clone(),
            result: run_variant(c, shared.as_ref(), reconstruction_only),
        })
        .collect();

    let name = format!("{axis:?}").to_lowercase();
    let mut csv = String::from("axis_value,step,mre,stderr\n");
    let mut summary = Vec::new();
    for v in &results {
        match &v.result {
            Ok(c) => {
                for ((n, m), e) in c.steps.iter().zip(&c.mre).zip(&c.stderr) {
                    csv.push_str(&format!("{},{n},{m:e},{e:e}\n", v.value));
                }
                summary.push(json!({"axis_value": v.value, "status": "ok", "time_averaged_mre": c.time_averaged}));
                println!("{name}={}: time-averaged MRE {:.4e}", v.value, c.time_averaged);
            }
            Err(e) => {
                summary.push(json!({"axis_value": v.value, "status": "failed", "error": e.to_string()}));
                eprintln!("{name}={}: {e}", v.value);
            }
        }
    }
    ctx.write(&format!("sweep_{name}.csv"), csv.as_bytes())?;
    ctx.write(
        &format!("sweep_{name}.json"),
        (serde_json::to_string_pretty(&summary).unwrap() + "\n").as_bytes(),
    )?;
    if results.iter().all(|v| v.result.is_err()) {
        return Err(CliError::Runtime("every sweep variant failed".into()));
    }
    Ok(())
}
