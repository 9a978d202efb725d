use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romforge_core::field::{Field, ParameterVector, ProblemTag, Trajectory};
use romforge_core::reduction::cae::{batch_loss, epoch_order, initial_autoencoder};
use romforge_core::reduction::{
    cae_fit, encode_dataset, load_reducer, pod_fit, pod_fit_matrix, reconstruction_error, CaeConfig, Reducer,
};
use romforge_core::snapshots::{build_dataset, sample_parameters, DatasetConfig, Normalization, SamplerConfig, SnapshotSet};
use romforge_core::solvers::{HeatConfig, ProblemConfig};
use romforge_nn::Tensor;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Eigenvalues of the smaller Gram matrix of `s` (columns are snapshots).
fn gram_eigenvalues(s: &[Vec<f64>], rows: usize) -> Vec<f64> {
    let cols = s.len();
    if cols <= rows {
        let g = (0..cols).map(|i| (0..cols).map(|j| (0..rows).map(|k| s[i][k] * s[j][k]).sum()).collect()).collect();
        jacobi_eigenvalues(g)
    } else {
        let g = (0..rows).map(|i| (0..rows).map(|j| s.iter().map(|c| c[i] * c[j]).sum()).collect()).collect();
        jacobi_eigenvalues(g)
    }
}

fn random_columns(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cols).map(|_| (0..rows).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect()
}

fn to_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(cols[0].len(), cols.len(), |i, j| cols[j][i])
}

fn check_eckart_young(rows: usize, cols: usize, seed: u64, max_modes: usize) {
    let data = random_columns(rows, cols, seed);
    let s = to_matrix(&data);
    let lambda = gram_eigenvalues(&data, rows);
    let (full, sv) = pod_fit_matrix(&s, max_modes).unwrap();
    for k in 0..max_modes {
        assert!((sv[k] * sv[k] - lambda[k]).abs() <= 1e-10 * lambda[0], "sigma_{k}");
    }
    for nl in 1..=max_modes {
        let v = full.columns(0, nl).clone_owned();
        let err = (&s - &v * (v.transpose() * &s)).norm_squared();
        let discarded: f64 = lambda[nl..].iter().map(|l| l.max(0.0)).sum();
        let total: f64 = lambda.iter().sum();
        assert!(
            (err - discarded).abs() <= 1e-8 * discarded.max(1e-12 * total),
            "n_latent {nl}: {err} vs {discarded}"
        );
        let gram = v.transpose() * &v;
        assert!((gram - DMatrix::identity(nl, nl)).amax() < 1e-10);
    }
}

#[test]
fn tall_matrix_error_equals_discarded_energy() {
    check_eckart_young(50, 20, 1, 20);
}

#[test]
fn wide_matrix_error_equals_discarded_energy() {
    check_eckart_young(64, 200, 2, 10);
}

fn set_from_fields(fields: Vec<Vec<Field>>, n_train: usize) -> SnapshotSet {
    let (nx, ny, channels) = (fields[0][0].nx, fields[0][0].ny, fields[0][0].channels);
    let n = fields.len();
    SnapshotSet {
        tag: ProblemTag::Heat,
        nx,
        ny,
        channels,
        dt: 0.1,
        stride: 1,
        seed: 0,
        n_train,
        n_test: n - n_train,
        normalization: Normalization::identity(channels),
        trajectories: fields
            .into_iter()
            .enumerate()
            .map(|(k, states)| Trajectory {
                parameter: ParameterVector::new(ProblemTag::Heat, vec![0.2 + 0.01 * k as f64, 0.5, 0.5, 0.5]).unwrap(),
                dt: 0.1,
                states,
            })
            .collect(),
        is_test: (0..n).map(|k| k >= n_train).collect(),
    }
}

/// Trajectories whose states lie in a fixed 3-dimensional subspace.
fn rank_three_set() -> (SnapshotSet, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let modes = random_columns(64, 3, 8);
    let fields = (0..4)
        .map(|_| {
            (0..10)
                .map(|_| {
                    let c: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
                    let v = (0..64).map(|i| (0..3).map(|k| c[k] * modes[k][i]).sum()).collect();
                    Field::from_values(8, 8, 1, v).unwrap()
                })
                .collect()
        })
        .collect();
    (set_from_fields(fields, 3), modes)
}

#[test]
fn rank_three_data_is_recovered_exactly() {
    let (set, _) = rank_three_set();
    let pod = pod_fit(&set, 3).unwrap();
    let curve = reconstruction_error(&pod, &set.test()).unwrap();
    assert!(curve.mre.iter().all(|&m| m < 1e-20), "{:?}", curve.mre);
    assert!(pod.singular_values[3] < 1e-12 * pod.singular_values[0]);
    let two = pod.truncated(2).unwrap();
    assert!(reconstruction_error(&two, &set.test()).unwrap().time_averaged > 1e-6);
}

#[test]
fn full_rank_basis_reconstructs_everything() {
    let data = random_columns(16, 40, 3);
    let fields = data.chunks(10).map(|c| c.iter().map(|v| Field::from_values(4, 4, 1, v.clone()).unwrap()).collect()).collect();
    let set = set_from_fields(fields, 2);
    let pod = pod_fit(&set, 16).unwrap();
    let curve = reconstruction_error(&pod, &set.test()).unwrap();
    assert!(curve.mre.iter().all(|&m| m < 1e-24));
}

#[test]
fn projection_properties() {
    let (set, modes) = rank_three_set();
    let pod = pod_fit(&set, 3).unwrap();
    let x: Vec<f64> = (0..64).map(|i| 0.3 * modes[0][i] - 1.1 * modes[2][i]).collect();
    let f = Field::from_values(8, 8, 1, x.clone()).unwrap();
    let back = &pod.decode(&pod.encode(&[&f]).unwrap()).unwrap()[0];
    for (a, b) in back.values.iter().zip(&x) {
        assert!((a - b).abs() < 1e-12);
    }
    let codes = vec![vec![0.5, -2.0, 1.25]];
    let again = pod.encode(&[&pod.decode(&codes).unwrap()[0]]).unwrap();
    for (a, b) in again[0].iter().zip(&codes[0]) {
        assert!((a - b).abs() < 1e-12);
    }
    // The residual of an arbitrary vector is orthogonal to the basis.
    let y = random_columns(64, 1, 99).remove(0);
    let fy = Field::from_values(8, 8, 1, y.clone()).unwrap();
    let proj = &pod.decode(&pod.encode(&[&fy]).unwrap()).unwrap()[0];
    let r = nalgebra::DVector::from_iterator(64, y.iter().zip(&proj.values).map(|(a, b)| a - b));
    assert!((pod.basis.transpose() * r).amax() < 1e-12);
}

fn heat_set() -> SnapshotSet {
    let samples = sample_parameters(&SamplerConfig::new(4, 3, 5), ProblemTag::Heat).unwrap();
    let problem = ProblemConfig::Heat(HeatConfig {
        grid: 8,
        n_steps: 12,
        ..Default::default()
    });
    build_dataset(&problem, &samples, &DatasetConfig { stride: 1, resample: None }, 5, None).unwrap()
}

#[test]
fn error_curve_is_nonincreasing_in_modes() {
    let set = heat_set();
    let pod = pod_fit(&set, 10).unwrap();
    let mut last = f64::INFINITY;
    for nl in 1..=10 {
        let p = pod.truncated(nl).unwrap();
        let m = reconstruction_error(&p, &set.train()).unwrap().time_averaged;
        assert!(m <= last * (1.0 + 1e-12), "n_latent {nl}: {m} > {last}");
        last = m;
        let gram = p.basis.transpose() * &p.basis;
        assert!((gram - DMatrix::identity(nl, nl)).amax() < 1e-10);
    }
}

#[test]
fn pod_model_file_round_trip() {
    let set = heat_set();
    let pod = pod_fit(&set, 4).unwrap();
    let bytes = pod.to_model_file().unwrap().to_bytes().unwrap();
    let back = load_reducer(&romforge_nn::ModelFile::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.kind(), "pod");
    let f = &set.test()[0].states[5];
    assert_eq!(back.encode(&[f]).unwrap(), pod.encode(&[f]).unwrap());
    assert!(back.check_dataset(&set).is_ok());
}

#[test]
fn latent_shapes_and_counts() {
    let set = heat_set();
    let pod = pod_fit(&set, 3).unwrap();
    let lat = encode_dataset(&pod, &set.train()).unwrap();
    assert_eq!(lat.len(), 4);
    for l in &lat {
        assert_eq!(l.codes.len(), set.stored_steps());
        assert!(l.codes.iter().all(|c| c.len() == 3));
    }
    assert!(pod.decode(&[vec![0.0; 2]]).is_err());
    let wrong = Field::zeros(4, 4, 1);
    assert!(pod.encode(&[&wrong]).is_err());
}

fn small_cae(n_latent: usize, epochs: usize) -> CaeConfig {
    CaeConfig {
        n_latent,
        alpha: 0.0,
        epochs,
        batch_size: 4,
        learning_rate: 2e-3,
        seed: 1,
        filters: vec![4, 8],
        kernel: 3,
        batch_norm: true,
        validation_fraction: 0.0,
        max_snapshots: None,
    }
}

#[test]
fn cae_overfits_a_single_snapshot() {
    let (nx, ny) = (8, 8);
    let x: Vec<f64> = (0..64).map(|k| ((k % 8) as f64 * 0.4).sin() * ((k / 8) as f64 * 0.3).cos()).collect();
    let f = Field::from_values(nx, ny, 1, x).unwrap();
    let fields = vec![vec![f.clone(); 8], vec![f.clone(); 2]];
    let mut set = set_from_fields(fields, 1);
    set.normalization = Normalization::fit(1, [&f]);
    let (model, hist) = cae_fit(&set, &small_cae(2, 300)).unwrap();
    for e in 1..10 {
        assert!(hist.train_loss[e + 1] < hist.train_loss[e], "epoch {e}: {:?}", &hist.train_loss[..12]);
    }
    let curve = reconstruction_error(&model, &set.test()).unwrap();
    assert!(curve.time_averaged < 1e-3, "{}", curve.time_averaged);
}

#[test]
fn cae_initial_loss_matches_recomputation() {
    let set = heat_set();
    let cfg = CaeConfig {
        alpha: 1e-3,
        ..small_cae(3, 2)
    };
    let (_, hist) = cae_fit(&set, &cfg).unwrap();
    let fit: Vec<Vec<f64>> = set
        .train()
        .iter()
        .flat_map(|t| t.states.iter())
        .map(|f| set.normalization.normalize(f).values)
        .collect();
    assert_eq!(hist.n_train_snapshots, fit.len());
    // With no validation split the fit set is the (shuffled) training data;
    // the mean of batch losses depends only on batch membership.
    let (d, _) = romforge_core::reduction::cae::training_snapshots(&set, &cfg);
    let (net, _) = initial_autoencoder(8, 8, 1, &cfg).unwrap();
    let order = epoch_order(cfg.seed, 0, d.len());
    let mut acc = 0.0;
    let chunks: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
    for c in &chunks {
        let items: Vec<&[f64]> = c.iter().map(|&k| d[k].as_slice()).collect();
        acc += batch_loss(&net, &Tensor::stack(&items, &[1, 8, 8]).unwrap(), cfg.alpha).unwrap();
    }
    assert_eq!(hist.train_loss[0], acc / chunks.len() as f64);
    assert_eq!(hist.train_loss.len(), 3);
    assert_eq!(hist.validation_loss.len(), 2);
}

#[test]
fn cae_model_file_round_trip_and_shapes() {
    let set = heat_set();
    let (model, _) = cae_fit(&set, &small_cae(3, 1)).unwrap();
    let lat = encode_dataset(&model, &set.test()).unwrap();
    assert_eq!(lat.len(), 3);
    assert!(lat.iter().all(|l| l.codes.len() == 13 && l.codes.iter().all(|c| c.len() == 3)));
    let bytes = model.to_model_file().unwrap().to_bytes().unwrap();
    let back = load_reducer(&romforge_nn::ModelFile::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.kind(), "cae");
    let t = set.test()[1];
    assert_eq!(encode_dataset(back.as_ref(), &[t]).unwrap(), encode_dataset(&model, &[t]).unwrap());
    assert_eq!(back.to_model_file().unwrap().to_bytes().unwrap(), bytes);
}

#[test]
fn cae_rejects_indivisible_grid() {
    let f = Field::zeros(6, 6, 1);
    let set = set_from_fields(vec![vec![f.clone(); 2], vec![f; 2]], 1);
    assert!(cae_fit(&set, &small_cae(2, 1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_matrices_satisfy_eckart_young(rows in 4usize..12, cols in 2usize..12, seed in 0u64..1000) {
        let data = random_columns(rows, cols, seed);
        let s = to_matrix(&data);
        let r = rows.min(cols);
        let (v, sv) = pod_fit_matrix(&s, r).unwrap();
        let total: f64 = sv.iter().map(|x| x * x).sum();
        for nl in 1..=r {
            let vn = v.columns(0, nl).clone_owned();
            let err = (&s - &vn * (vn.transpose() * &s)).norm_squared();
            let discarded: f64 = sv[nl..].iter().map(|x| x * x).sum();
            prop_assert!((err - discarded).abs() <= 1e-9 * total);
        }
    }
}
