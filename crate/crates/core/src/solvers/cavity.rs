//! Lid-driven cavity on a uniform staggered (MAC) grid: Chorin projection
//! with an explicit conservative predictor (donor-cell blended convection),
//! a pure-Neumann pressure Poisson solve and a velocity correction.
//!
//! The lid is the `y = 0` edge moving with velocity `(1, 0)`.

use serde::{Deserialize, Serialize};

use super::cg::{conjugate_gradient, CgOptions};
use crate::error::{CoreError, Result};
use crate::field::{Field, ParameterVector, ProblemTag, Real, Trajectory};

pub const LID_VELOCITY: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    pub grid: usize,
    pub dt: f64,
    pub n_steps: usize,
    /// Upwind blending factor lower bound for the convective terms.
    #[serde(default = "default_gamma")]
    pub donor_cell: f64,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
}

fn default_gamma() -> f64 {
    0.0
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for CavityConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            dt: 0.01,
            n_steps: 500,
            donor_cell: default_gamma(),
            tolerance: default_tol(),
        }
    }
}

impl CavityConfig {
    /// Largest stable step for the given Reynolds number and velocity scale.
    pub fn stable_dt(&self, re: f64, umax: f64) -> f64 {
        let h = 1.0 / self.grid as f64;
        (re * h * h / 4.0).min(h / umax.max(LID_VELOCITY))
    }

    pub fn validate(&self, re: f64) -> Result<()> {
        if self.grid < 4 {
            return Err(CoreError::config(format!("cavity grid must be >= 4, got {}", self.grid)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() || self.n_steps == 0 {
            return Err(CoreError::config("cavity dt and n_steps must be positive"));
        }
        if !(re > 0.0) {
            return Err(CoreError::config(format!("Reynolds number must be positive, got {re}")));
        }
        let lim = self.stable_dt(re, LID_VELOCITY);
        if self.dt > lim {
            return Err(CoreError::config(format!(
                "cavity dt {} exceeds the explicit stability bound {lim:.4e} (Re {re}, grid {})",
                self.dt, self.grid
            )));
        }
        Ok(())
    }
}

/// Staggered state: `u` on vertical faces (`n` rows × `n+1`), `v` on
/// horizontal faces (`n+1` rows × `n`), `p` at cell centres.
#[derive(Clone, Debug)]
pub struct MacState<T> {
    pub n: usize,
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub p: Vec<T>,
}

impl<T: Real> MacState<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            u: vec![T::zero(); n * (n + 1)],
            v: vec![T::zero(); (n + 1) * n],
            p: vec![T::zero(); n * n],
        }
    }

    #[inline]
    fn ui(&self, j: usize, i: usize) -> usize {
        j * (self.n + 1) + i
    }

    #[inline]
    fn vi(&self, j: usize, i: usize) -> usize {
        j * self.n + i
    }

    /// `u` including ghost rows `j = -1` (lid) and `j = n`.
    #[inline]
    fn u_at(&self, j: isize, i: usize) -> T {
        let n = self.n as isize;
        if j < 0 {
            T::c(2.0 * LID_VELOCITY) - self.u[self.ui(0, i)]
        } else if j >= n {
            -self.u[self.ui(self.n - 1, i)]
        } else {
            self.u[self.ui(j as usize, i)]
        }
    }

    /// `v` including ghost columns `i = -1` and `i = n`.
    #[inline]
    fn v_at(&self, j: usize, i: isize) -> T {
        let n = self.n as isize;
        if i < 0 {
            -self.v[self.vi(j, 0)]
        } else if i >= n {
            -self.v[self.vi(j, self.n - 1)]
        } else {
            self.v[self.vi(j, i as usize)]
        }
    }

    /// Discrete divergence per cell.
    pub fn divergence(&self) -> Vec<T> {
        let n = self.n;
        let inv_h = T::c(n as f64);
        let mut d = vec![T::zero(); n * n];
        for j in 0..n {
            for i in 0..n {
                d[j * n + i] = (self.u[self.ui(j, i + 1)] - self.u[self.ui(j, i)]
                    + self.v[self.vi(j + 1, i)]
                    - self.v[self.vi(j, i)])
                    * inv_h;
            }
        }
        d
    }

    pub fn max_speed(&self) -> T {
        self.u
            .iter()
            .chain(&self.v)
            .fold(T::zero(), |a, &b| if b.abs() > a { b.abs() } else { a })
    }

    /// Cell-centred `(u_x, u_y, p)`.
    pub fn to_field(&self) -> Field<T> {
        let n = self.n;
        let half = T::c(0.5);
        let mut f = Field::zeros(n, n, 3);
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                f.values[k] = half * (self.u[self.ui(j, i)] + self.u[self.ui(j, i + 1)]);
                f.values[n * n + k] = half * (self.v[self.vi(j, i)] + self.v[self.vi(j + 1, i)]);
                f.values[2 * n * n + k] = self.p[k];
            }
        }
        f
    }
}

/// `y = -L x` for the pure-Neumann five-point Laplacian (scaled by `h²`).
fn neg_neumann_laplacian<T: Real>(n: usize, x: &[T], y: &mut [T]) {
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            let mut acc = T::zero();
            if i > 0 {
                acc = acc + x[k] - x[k - 1];
            }
            if i + 1 < n {
                acc = acc + x[k] - x[k + 1];
            }
            if j > 0 {
                acc = acc + x[k] - x[k - n];
            }
            if j + 1 < n {
                acc = acc + x[k] - x[k + n];
            }
            y[k] = acc;
        }
    }
}

/// Per-step diagnostics of a cavity run.
#[derive(Clone, Debug, Default)]
pub struct CavityDiagnostics {
    /// Max-norm of the discrete divergence after each projection.
    pub max_divergence: Vec<f64>,
    pub kinetic_energy: Vec<f64>,
}

pub struct CavitySolver<T> {
    pub cfg: CavityConfig,
    pub re: f64,
    pub state: MacState<T>,
    fu: Vec<T>,
    fv: Vec<T>,
}

impl<T: Real> CavitySolver<T> {
    pub fn new(cfg: &CavityConfig, re: f64) -> Result<Self> {
        cfg.validate(re)?;
        let n = cfg.grid;
        Ok(Self {
            cfg: cfg.clone(),
            re,
            state: MacState::new(n),
            fu: vec![T::zero(); n * (n + 1)],
            fv: vec![T::zero(); (n + 1) * n],
        })
    }

    fn predictor(&mut self) -> Result<()> {
        let s = &self.state;
        let n = s.n;
        let dtf = self.cfg.dt;
        let h = 1.0 / n as f64;
        let umax = s.max_speed().to_f64().unwrap_or(f64::INFINITY);
        if dtf > self.cfg.stable_dt(self.re, umax) {
            return Err(CoreError::Solver {
                solver: "cavity",
                message: format!("velocity {umax:.3} violates the stability bound for dt {dtf}"),
            });
        }
        let gamma = T::c((umax * dtf / h).max(self.cfg.donor_cell).min(1.0));
        let (dt, inv_h, nu) = (T::c(dtf), T::c(1.0 / h), T::c(1.0 / self.re));
        let inv_h2 = inv_h * inv_h;
        let half = T::c(0.5);
        let quarter = T::c(0.25);
        self.fu.copy_from_slice(&s.u);
        for j in 0..n {
            let jj = j as isize;
            for i in 1..n {
                let uc = s.u_at(jj, i);
                let (ue, uw) = (s.u_at(jj, i + 1), s.u_at(jj, i - 1));
                let (un, us) = (s.u_at(jj + 1, i), s.u_at(jj - 1, i));
                let lap = (ue + uw + un + us - T::c(4.0) * uc) * inv_h2;
                let (a, b) = (uc + ue, uw + uc);
                let du2 = quarter * inv_h * ((a * a - b * b) + gamma * (a.abs() * (uc - ue) - b.abs() * (uw - uc)));
                let vt = half * (s.v[s.vi(j + 1, i - 1)] + s.v[s.vi(j + 1, i)]);
                let vb = half * (s.v[s.vi(j, i - 1)] + s.v[s.vi(j, i)]);
                let duv = half
                    * inv_h
                    * ((vt * (uc + un) - vb * (us + uc)) + gamma * (vt.abs() * (uc - un) - vb.abs() * (us - uc)));
                self.fu[s.ui(j, i)] = uc + dt * (nu * lap - du2 - duv);
            }
        }
        self.fv.copy_from_slice(&s.v);
        for j in 1..n {
            for i in 0..n {
                let ii = i as isize;
                let vc = s.v_at(j, ii);
                let (vn, vs) = (s.v_at(j + 1, ii), s.v_at(j - 1, ii));
                let (ve, vw) = (s.v_at(j, ii + 1), s.v_at(j, ii - 1));
                let lap = (vn + vs + ve + vw - T::c(4.0) * vc) * inv_h2;
                let (a, b) = (vc + vn, vs + vc);
                let dv2 = quarter * inv_h * ((a * a - b * b) + gamma * (a.abs() * (vc - vn) - b.abs() * (vs - vc)));
                let ur = half * (s.u[s.ui(j - 1, i + 1)] + s.u[s.ui(j, i + 1)]);
                let ul = half * (s.u[s.ui(j - 1, i)] + s.u[s.ui(j, i)]);
                let duv = half
                    * inv_h
                    * ((ur * (vc + ve) - ul * (vw + vc)) + gamma * (ur.abs() * (vc - ve) - ul.abs() * (vw - vc)));
                self.fv[s.vi(j, i)] = vc + dt * (nu * lap - dv2 - duv);
            }
        }
        Ok(())
    }

    /// Advances one step and returns the post-projection divergence max-norm.
    pub fn step(&mut self) -> Result<f64> {
        self.predictor()?;
        let n = self.cfg.grid;
        let dt = T::c(self.cfg.dt);
        let h = T::c(1.0 / n as f64);
        std::mem::swap(&mut self.state.u, &mut self.fu);
        std::mem::swap(&mut self.state.v, &mut self.fv);
        // -L p = -h² div / dt, with L scaled by h².
        let div = self.state.divergence();
        let rhs: Vec<T> = div.iter().map(|&d| -d * h * h / dt).collect();
        let opts = CgOptions {
            relative_tolerance: self.cfg.tolerance,
            max_iterations: 20 * n * n,
            project_mean: true,
        };
        let mut p = self.state.p.clone();
        conjugate_gradient(|x, y| neg_neumann_laplacian(n, x, y), &rhs, &mut p, opts)?;
        let s = &mut self.state;
        let scale = dt / h;
        for j in 0..n {
            for i in 1..n {
                let k = s.ui(j, i);
                s.u[k] = s.u[k] - scale * (p[j * n + i] - p[j * n + i - 1]);
            }
        }
        for j in 1..n {
            for i in 0..n {
                let k = s.vi(j, i);
                s.v[k] = s.v[k] - scale * (p[j * n + i] - p[(j - 1) * n + i]);
            }
        }
        s.p = p;
        if s.u.iter().chain(&s.v).any(|v| !v.is_finite()) {
            return Err(CoreError::Solver {
                solver: "cavity",
                message: "non-finite velocity".into(),
            });
        }
        Ok(s.divergence().iter().fold(0.0f64, |a, d| a.max(d.abs().to_f64().unwrap_or(f64::INFINITY))))
    }
}

/// Kinetic energy `½∫|u|²` of a cell-centred cavity field.
pub fn kinetic_energy<T: Real>(f: &Field<T>) -> f64 {
    let cell = 1.0 / (f.nx * f.ny) as f64;
    let (ux, uy) = (f.channel(0), f.channel(1));
    0.5 * cell
        * ux.iter()
            .zip(uy)
            .map(|(a, b)| {
                let (a, b) = (a.to_f64().unwrap_or(f64::NAN), b.to_f64().unwrap_or(f64::NAN));
                a * a + b * b
            })
            .sum::<f64>()
}

/// `u_x` along the vertical centre line `x = ½`, one value per cell row.
pub fn centerline_ux<T: Real>(f: &Field<T>) -> Vec<f64> {
    let n = f.nx;
    (0..f.ny)
        .map(|j| {
            let v = if n % 2 == 0 {
                0.5 * (f.at(0, j, n / 2 - 1) + f.at(0, j, n / 2)).to_f64().unwrap_or(f64::NAN)
            } else {
                f.at(0, j, n / 2).to_f64().unwrap_or(f64::NAN)
            };
            v
        })
        .collect()
}

fn check_params(p: &ParameterVector) -> Result<f64> {
    if p.tag != ProblemTag::Cavity || p.values.len() != 1 {
        return Err(CoreError::mismatch("cavity parameter", "(Re)", format!("{p:?}")));
    }
    Ok(p.values[0])
}

pub fn solve_cavity_with_diagnostics<T: Real>(
    cfg: &CavityConfig,
    p: &ParameterVector,
) -> Result<(Trajectory<T>, CavityDiagnostics)> {
    let re = check_params(p)?;
    let mut solver = CavitySolver::<T>::new(cfg, re)?;
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    let mut diag = CavityDiagnostics::default();
    let f0 = solver.state.to_field();
    diag.kinetic_energy.push(kinetic_energy(&f0));
    states.push(f0);
    for _ in 0..cfg.n_steps {
        diag.max_divergence.push(solver.step()?);
        let f = solver.state.to_field();
        diag.kinetic_energy.push(kinetic_energy(&f));
        states.push(f);
    }
    Ok((
        Trajectory {
            parameter: p.clone(),
            dt: cfg.dt,
            states,
        },
        diag,
    ))
}

pub fn solve_cavity<T: Real>(cfg: &CavityConfig, p: &ParameterVector) -> Result<Trajectory<T>> {
    solve_cavity_with_diagnostics(cfg, p).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_state_is_at_rest() {
        let cfg = CavityConfig {
            n_steps: 3,
            ..Default::default()
        };
        let p = ParameterVector::new(ProblemTag::Cavity, vec![150.0]).unwrap();
        let (t, d) = solve_cavity_with_diagnostics::<f64>(&cfg, &p).unwrap();
        assert!(t.states[0].values.iter().all(|&v| v == 0.0));
        assert!(d.max_divergence.iter().all(|&v| v < 1e-8));
        assert!(t.states[3].at(0, 0, 16) > 0.0, "lid drags the first row along +x");
    }

    #[test]
    fn stability_bound_is_enforced() {
        let cfg = CavityConfig {
            dt: 0.05,
            ..Default::default()
        };
        let p = ParameterVector::new(ProblemTag::Cavity, vec![100.0]).unwrap();
        assert!(matches!(solve_cavity::<f64>(&cfg, &p), Err(CoreError::Config(_))));
    }
}
