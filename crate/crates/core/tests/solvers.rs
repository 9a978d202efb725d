use romforge_core::solvers::advection::{advection_exact, solve_advection, AdvectionConfig, Interpolation};
use romforge_core::solvers::cavity::{centerline_ux, solve_cavity_with_diagnostics, CavityConfig};
use romforge_core::solvers::heat::{heat_steady_state, restrict_by_two, solve_heat, HeatConfig};
use romforge_core::{Field, ParameterVector, ProblemTag};

fn rel_sq(a: &Field, b: &Field) -> f64 {
    let num: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum();
    num / b.norm_sq()
}

fn heat_final(n: usize, mu: [f64; 4], dt: f64, steps: usize) -> Field {
    let cfg = HeatConfig {
        grid: n,
        dt,
        n_steps: steps,
        ..Default::default()
    };
    let p = ParameterVector::new(ProblemTag::Heat, mu.to_vec()).unwrap();
    solve_heat::<f64>(&cfg, &p).unwrap().states.pop().unwrap()
}

#[test]
fn heat_uniform_long_horizon_reaches_linear_profile() {
    let f = heat_final(32, [1.0; 4], 0.1, 100);
    let err = (0..32)
        .flat_map(|j| (0..32).map(move |i| (i, j)))
        .map(|(i, j)| (f.at(0, j, i) - (1.0 - f.center(i, j).1)).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-3, "max error {err}");
}

/// Rates from successive grid differences `‖u_h − R u_{h/2}‖`, where `R`
/// averages 2×2 blocks of the finer solution.
fn self_convergence_rates(mu: [f64; 4]) -> Vec<f64> {
    let grids = [16usize, 32, 64, 128];
    let fields: Vec<Field> = grids.iter().map(|&n| heat_final(n, mu, 0.05, 10)).collect();
    let diffs: Vec<f64> = fields
        .windows(2)
        .map(|w| {
            let r = restrict_by_two(&w[1]);
            (w[0].values.iter().zip(&r.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / w[0].len() as f64).sqrt()
        })
        .collect();
    diffs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn heat_second_order_self_convergence() {
    let rates = self_convergence_rates([0.8, 1.0, 1.2, 0.9]);
    eprintln!("heat self-convergence rates {rates:?}");
    assert!(rates.iter().all(|r| (1.7..=2.3).contains(r)), "{rates:?}");
}

#[test]
fn heat_stays_within_steady_bounds() {
    let cfg = HeatConfig::default();
    for mu in [[0.1, 1.5, 1.5, 0.1], [1.5, 0.1, 0.3, 1.2], [0.4; 4]] {
        let p = ParameterVector::new(ProblemTag::Heat, mu.to_vec()).unwrap();
        let steady = heat_steady_state::<f64>(&cfg, &p).unwrap();
        let smax = steady.values.iter().cloned().fold(f64::MIN, f64::max);
        let t = solve_heat::<f64>(&cfg, &p).unwrap();
        for s in &t.states {
            for &v in &s.values {
                assert!(v >= -1e-3 * smax && v <= 1.01 * smax, "{mu:?}: {v} vs steady max {smax}");
            }
        }
    }
}

fn rotation_mre(grid: usize, interp: Interpolation) -> (f64, f64) {
    let steps = 838;
    let mu1 = 1.0;
    let p = ParameterVector::new(ProblemTag::Advection, vec![mu1, 0.7]).unwrap();
    let cfg = AdvectionConfig {
        grid,
        dt: 2.0 * std::f64::consts::PI / (mu1 * steps as f64),
        n_steps: steps,
        interpolation: interp,
    };
    let t = solve_advection::<f64>(&cfg, &p).unwrap();
    let exact: Field = advection_exact(grid, &p, 2.0 * std::f64::consts::PI / mu1).unwrap();
    let last = t.states.last().unwrap();
    let mass0: f64 = t.states[0].values.iter().sum();
    let mass1: f64 = last.values.iter().sum();
    (rel_sq(last, &exact), (mass1 - mass0).abs() / mass0)
}

#[test]
fn advection_full_rotation_matches_exact() {
    let (mre, drift) = rotation_mre(60, Interpolation::Cubic);
    eprintln!("advection cubic 60²: MRE {mre:.3e}, mass drift {drift:.3e}");
    let (bl, _) = rotation_mre(60, Interpolation::Bilinear);
    eprintln!("advection bilinear 60²: MRE {bl:.3e}");
    assert!(mre < 1e-2);
    assert!(drift < 1e-2);
}

#[test]
fn advection_error_decreases_under_refinement() {
    let e: Vec<f64> = [30, 60, 120].iter().map(|&n| rotation_mre(n, Interpolation::Cubic).0).collect();
    eprintln!("advection refinement MRE {e:?}");
    assert!(e[0] > e[1] && e[1] > e[2]);
}

#[test]
fn advection_exact_symmetries() {
    let p = ParameterVector::new(ProblemTag::Advection, vec![1.3, 2.1]).unwrap();
    let a: Field = advection_exact(60, &p, 0.0).unwrap();
    let b: Field = advection_exact(60, &p, 2.0 * std::f64::consts::PI / 1.3).unwrap();
    let d = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(d < 1e-12, "{d}");
    // Half a turn lands on the antipodal start point.
    let h: Field = advection_exact(60, &p, std::f64::consts::PI / 1.3).unwrap();
    let (x0, y0) = (0.5 - 0.25 * 2.1f64.cos(), 0.5 - 0.25 * 2.1f64.sin());
    let k = h.values.iter().enumerate().fold((0, 0.0), |a, (k, &v)| if v > a.1 { (k, v) } else { a }).0;
    let (x, y) = h.center(k % 60, k / 60);
    assert!((x - x0).abs() <= 1.0 / 60.0 && (y - y0).abs() <= 1.0 / 60.0);
}

fn cavity_min_centerline(n: usize, dt: f64, t_end: f64) -> (f64, f64, f64) {
    let cfg = CavityConfig {
        grid: n,
        dt,
        n_steps: (t_end / dt).round() as usize,
        ..Default::default()
    };
    let p = ParameterVector::new(ProblemTag::Cavity, vec![100.0]).unwrap();
    let (t, d) = solve_cavity_with_diagnostics::<f64>(&cfg, &p).unwrap();
    let prof = centerline_ux(t.states.last().unwrap());
    let div = d.max_divergence.iter().cloned().fold(0.0, f64::max);
    let ke = d.kinetic_energy.iter().cloned().fold(0.0, f64::max);
    (prof.iter().cloned().fold(f64::MAX, f64::min), div, ke)
}

#[test]
fn cavity_divergence_free_and_self_convergent() {
    let (m32, d32, _) = cavity_min_centerline(32, 0.01, 20.0);
    let (m64, d64, _) = cavity_min_centerline(64, 0.005, 20.0);
    eprintln!("cavity Re=100 centreline min: 32² {m32:.4}, 64² {m64:.4}; max div {d32:.2e} {d64:.2e}");
    assert!(d32 < 1e-8 && d64 < 1e-8);
    assert!((m32 - m64).abs() <= 0.05);
}

#[test]
fn cavity_energy_bounded_over_reynolds_range() {
    for re in [100.0, 200.0, 300.0] {
        let cfg = CavityConfig {
            grid: 32,
            dt: 0.01,
            n_steps: 500,
            ..Default::default()
        };
        let p = ParameterVector::new(ProblemTag::Cavity, vec![re]).unwrap();
        let (_, d) = solve_cavity_with_diagnostics::<f64>(&cfg, &p).unwrap();
        assert!(d.kinetic_energy.iter().all(|e| e.is_finite() && *e < 0.5), "Re {re}");
    }
}

#[test]
fn solvers_are_bitwise_deterministic() {
    let p = ParameterVector::new(ProblemTag::Heat, vec![0.2, 0.9, 1.4, 0.6]).unwrap();
    let cfg = HeatConfig {
        n_steps: 10,
        ..Default::default()
    };
    assert_eq!(solve_heat::<f64>(&cfg, &p).unwrap(), solve_heat::<f64>(&cfg, &p).unwrap());
}
