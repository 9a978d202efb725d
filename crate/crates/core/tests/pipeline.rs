use romforge_core::field::{ProblemTag, Trajectory};
use romforge_core::pipeline::{
    evaluate, median, offline_train, online_predict, offline_tune, timing_report, EvalOptions, LatentSource,
    OfflineConfig, ReductionConfig, ReductionMethod, TuneState,
};
use romforge_core::reduction::{reconstruct, reconstruction_error};
use romforge_core::snapshots::{DatasetConfig, SamplerConfig};
use romforge_core::solvers::{HeatConfig, ProblemConfig};
use romforge_core::stepper::{MemoryEncoder, StepperConfig, StepperModel, StepperTrainConfig};
use std::sync::OnceLock;

fn config() -> OfflineConfig {
    OfflineConfig {
        problem: ProblemConfig::Heat(HeatConfig {
            grid: 8,
            n_steps: 24,
            ..Default::default()
        }),
        sampler: SamplerConfig::new(6, 3, 7),
        dataset: DatasetConfig { stride: 1, resample: None },
        reduction: ReductionConfig {
            method: ReductionMethod::Pod,
            n_latent: 3,
            ..ReductionConfig::default()
        },
        stepper: StepperConfig {
            memory: 4,
            horizon: 2,
            memory_encoder: MemoryEncoder::Ccnn,
            embed_width: 4,
            param_layers: vec![4],
            head_layers: vec![8, 8],
            ccnn_channels: 4,
            training: StepperTrainConfig {
                epochs: 5,
                batch_size: 16,
                ..Default::default()
            },
            ..StepperConfig::default()
        },
        eval: EvalOptions::default(),
    }
}

fn trained() -> &'static romforge_core::pipeline::OfflineResult {
    static R: OnceLock<romforge_core::pipeline::OfflineResult> = OnceLock::new();
    R.get_or_init(|| offline_train(&config()).unwrap())
}

#[test]
fn offline_train_produces_consistent_report() {
    let r = trained();
    assert_eq!(r.dataset.n_train, 6);
    assert_eq!(r.report.n_test, 3);
    assert_eq!(r.reducer.n_latent(), 3);
    assert_eq!(r.stepper.config.n_latent, 3);
    assert_eq!(r.stepper.config.n_params, ProblemTag::Heat.n_params());
    let steps = r.dataset.stored_steps();
    assert_eq!(r.report.high_fidelity.steps.len() + r.report.high_fidelity.excluded.len(), steps);
    assert!(r.report.high_fidelity.time_averaged.is_finite());
    assert!(r.report.failures.is_empty());
    assert_eq!(r.report.probe_steps, vec![0, (steps - 1) / 2, steps - 1]);
    assert_eq!(r.report.abs_error.len(), 3);
    assert!(r.report.abs_error.iter().all(|c| c.len() == 3));
    assert_eq!(r.stepper_history.train_loss.len(), 6);
}

#[test]
fn ground_truth_evaluation_equals_reconstruction_error() {
    let r = trained();
    let test = r.dataset.test();
    let rep = evaluate(r.reducer.as_ref(), LatentSource::GroundTruth, &test, None, &EvalOptions::default()).unwrap();
    let rec = reconstruction_error(r.reducer.as_ref(), &test).unwrap();
    assert_eq!(rep.high_fidelity, rec);
    assert_eq!(rep.high_fidelity.time_averaged.to_bits(), rec.time_averaged.to_bits());
    assert!(rep.latent.mre.iter().all(|&m| m == 0.0));
}

#[test]
fn single_case_has_zero_standard_error() {
    let r = trained();
    let test = r.dataset.test();
    let rep = evaluate(r.reducer.as_ref(), LatentSource::Stepper(&r.stepper), &test[..1], None, &EvalOptions::default())
        .unwrap();
    assert_eq!(rep.n_test, 1);
    assert!(rep.high_fidelity.stderr.iter().all(|&s| s == 0.0));
}

#[test]
fn evaluation_rejects_training_parameters_and_bad_probes() {
    let r = trained();
    let train = r.dataset.train();
    let err = evaluate(r.reducer.as_ref(), LatentSource::GroundTruth, &train[..1], Some(&train), &EvalOptions::default());
    assert!(err.is_err());
    let test = r.dataset.test();
    let opts = EvalOptions {
        probes: Some(vec![0, 1000]),
    };
    let err = evaluate(r.reducer.as_ref(), LatentSource::GroundTruth, &test, None, &opts).unwrap_err();
    assert!(err.to_string().contains("evaluation.probes"), "{err}");
}

#[test]
fn csv_and_summary_agree() {
    let r = trained();
    let csv = r.report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,mre_latent,stderr_latent,mre_hf,stderr_hf"));
    let hf: Vec<f64> = lines.filter_map(|l| l.split(',').nth(3).filter(|c| !c.is_empty()).map(|c| c.parse().unwrap())).collect();
    let mean = hf.iter().sum::<f64>() / hf.len() as f64;
    let summary: serde_json::Value = serde_json::from_str(&r.report.summary_json()).unwrap();
    let reported = summary["time_averaged_mre"].as_f64().unwrap();
    assert!((mean - reported).abs() <= 1e-12 * reported.abs().max(1e-300));
    assert_eq!(summary["n_test"], 3);
}

#[test]
fn online_prediction_keeps_seed_and_respects_zero_head() {
    let r = trained();
    let t: &Trajectory = r.dataset.test()[0];
    let w = r.stepper.config.memory + 1;
    let p = online_predict(r.reducer.as_ref(), &r.stepper, &t.parameter, &t.states[..w], 7, t.dt).unwrap();
    assert_eq!(p.trajectory.states.len(), w + 7);
    assert_eq!(p.codes.len(), p.trajectory.states.len());
    let seed_recon = reconstruct(r.reducer.as_ref(), &Trajectory {
        states: t.states[..w].to_vec(),
        ..t.clone()
    })
    .unwrap();
    assert_eq!(&p.trajectory.states[..w], &seed_recon[..]);

    let mut zero: StepperModel = r.stepper.clone();
    zero.net.zero_output_layer();
    let p = online_predict(r.reducer.as_ref(), &zero, &t.parameter, &t.states[..w], 9, t.dt).unwrap();
    let last = &p.codes[w - 1];
    assert!(p.codes[w..].iter().all(|c| c == last));
    assert!(p.failed_at.is_none());
}

#[test]
fn failed_rollouts_are_padded_and_listed() {
    let r = trained();
    let mut bad = r.stepper.clone();
    bad.net.zero_output_layer();
    bad.net.head = bad.net.head.map_scalar(|_| f64::NAN);
    let test = r.dataset.test();
    let rep = evaluate(r.reducer.as_ref(), LatentSource::Stepper(&bad), &test, None, &EvalOptions::default()).unwrap();
    assert_eq!(rep.failures.len(), 3);
    assert!(rep.failures.iter().all(|f| f.step == bad.config.memory + 1));
    let last = rep.high_fidelity.mre.last().unwrap();
    assert!(last.is_nan());
}

#[test]
fn online_prediction_checks_latent_width() {
    let r = trained();
    let mut cfg = r.stepper.config.clone();
    cfg.n_latent = 2;
    let other = StepperModel::new(cfg).unwrap();
    let t = r.dataset.test()[0];
    assert!(online_predict(r.reducer.as_ref(), &other, &t.parameter, &t.states[..5], 3, t.dt).is_err());
}

#[test]
fn tuning_stops_at_target_or_budget() {
    let base = config();
    let o = offline_tune(&base, TuneState::from_config(&base, f64::INFINITY), &romforge_core::pipeline::default_update, 5)
        .unwrap();
    assert_eq!(o.history.len(), 1);
    assert!(o.converged);

    let o = offline_tune(&base, TuneState::from_config(&base, 0.0), &romforge_core::pipeline::default_update, 3).unwrap();
    assert_eq!(o.history.len(), 3);
    assert!(!o.converged);
    let best = o.history.iter().map(|h| h.validation_mre).fold(f64::INFINITY, f64::min);
    assert_eq!(o.best_mre, best);
    let arg = o.history.iter().find(|h| h.validation_mre == best).unwrap();
    assert_eq!(o.best, arg.config);
    assert!(offline_tune(&base, TuneState::from_config(&base, 0.0), &romforge_core::pipeline::default_update, 0).is_err());
}

#[test]
fn median_of_odd_and_even_samples() {
    assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
}

#[test]
fn timing_report_has_expected_horizon() {
    let r = trained();
    let cfg = config();
    let mu = &r.dataset.test()[0].parameter;
    let t = timing_report(&cfg.problem, &cfg.dataset, r.reducer.as_ref(), &r.stepper, mu, 3, None).unwrap();
    assert_eq!(t.hf_steps, 24);
    assert_eq!(t.rollout_steps, 24 - 4);
    assert!(t.hf_solve_seconds > 0.0 && t.online_seconds > 0.0);
    assert!(t.linearity_ratio > 1.0, "{}", t.linearity_ratio);
    assert_eq!(t.speedup, t.hf_solve_seconds / t.online_seconds);
    assert!(timing_report(&cfg.problem, &cfg.dataset, r.reducer.as_ref(), &r.stepper, mu, 2, None).is_err());
}
