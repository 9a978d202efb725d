//! Variable-coefficient heat equation `u_t = ∇·(μ∇u)` on the unit square with
//! `μ` piecewise constant on the four quadrants, `u = 0` on the top edge, unit
//! outward normal derivative on the bottom edge and insulated sides.
//!
//! Cell-centred finite volumes (five-point stencil, harmonic face averages of
//! `μ`), Crank–Nicolson in time with backward-Euler start-up half steps.

use serde::{Deserialize, Serialize};

use super::cg::{conjugate_gradient, CgOptions};
use crate::error::{CoreError, Result};
use crate::field::{Field, ParameterVector, ProblemTag, Real, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatConfig {
    pub grid: usize,
    pub dt: f64,
    pub n_steps: usize,
    /// Number of leading steps taken as two backward-Euler half steps, which
    /// damps the stiff modes Crank–Nicolson would otherwise leave ringing.
    #[serde(default = "default_startup")]
    pub startup_steps: usize,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
}

fn default_startup() -> usize {
    2
}

fn default_tol() -> f64 {
    1e-10
}

impl Default for HeatConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            dt: 0.1,
            n_steps: 100,
            startup_steps: default_startup(),
            tolerance: default_tol(),
        }
    }
}

impl HeatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 8 || self.grid % 2 != 0 {
            return Err(CoreError::config(format!("heat grid must be even and >= 8, got {}", self.grid)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(CoreError::config(format!("heat dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(CoreError::config("heat n_steps must be positive"));
        }
        Ok(())
    }
}

/// Assembled spatial operator `A` (positive semi-definite, `A u ≈ -∇·(μ∇u)`)
/// and boundary source `b`, so that `u_t = -A u + b`.
pub struct HeatOperator<T> {
    pub n: usize,
    /// Coupling to the right neighbour, per cell (zero on the last column).
    east: Vec<T>,
    /// Coupling to the upper neighbour, per cell (zero on the last row).
    north: Vec<T>,
    diag: Vec<T>,
    pub source: Vec<T>,
}

/// Diffusion value of the quadrant containing cell centre `(x, y)`.
pub fn quadrant_diffusion(mu: &[f64], x: f64, y: f64) -> f64 {
    let k = usize::from(x >= 0.5) + 2 * usize::from(y >= 0.5);
    mu[k]
}

impl<T: Real> HeatOperator<T> {
    pub fn new(n: usize, mu: &[f64]) -> Self {
        let h = 1.0 / n as f64;
        let m = |i: usize, j: usize| quadrant_diffusion(mu, (i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
        let harm = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let mut east = vec![T::zero(); n * n];
        let mut north = vec![T::zero(); n * n];
        let mut diag = vec![T::zero(); n * n];
        let mut source = vec![T::zero(); n * n];
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                if i + 1 < n {
                    let c = harm(m(i, j), m(i + 1, j)) / (h * h);
                    east[k] = T::c(c);
                    diag[k] = diag[k] + T::c(c);
                    diag[k + 1] = diag[k + 1] + T::c(c);
                }
                if j + 1 < n {
                    let c = harm(m(i, j), m(i, j + 1)) / (h * h);
                    north[k] = T::c(c);
                    diag[k] = diag[k] + T::c(c);
                    diag[k + n] = diag[k + n] + T::c(c);
                } else {
                    // Dirichlet face half a cell away.
                    diag[k] = diag[k] + T::c(2.0 * m(i, j) / (h * h));
                }
                if j == 0 {
                    // Prescribed outward normal derivative 1 on the bottom face.
                    source[k] = T::c(m(i, j) / h);
                }
            }
        }
        Self {
            n,
            east,
            north,
            diag,
            source,
        }
    }

    /// `y = (I·shift + scale·A) x`.
    pub fn apply_shifted(&self, shift: T, scale: T, x: &[T], y: &mut [T]) {
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let mut acc = self.diag[k] * x[k];
                if i + 1 < n {
                    acc = acc - self.east[k] * x[k + 1];
                }
                if i > 0 {
                    acc = acc - self.east[k - 1] * x[k - 1];
                }
                if j + 1 < n {
                    acc = acc - self.north[k] * x[k + n];
                }
                if j > 0 {
                    acc = acc - self.north[k - n] * x[k - n];
                }
                y[k] = shift * x[k] + scale * acc;
            }
        }
    }

    /// Solution of `A u = b`.
    pub fn steady_state(&self, tol: f64) -> Result<Vec<T>> {
        let mut u = vec![T::zero(); self.n * self.n];
        let opts = CgOptions {
            relative_tolerance: tol,
            max_iterations: 50 * self.n * self.n,
            project_mean: false,
        };
        conjugate_gradient(|x, y| self.apply_shifted(T::zero(), T::one(), x, y), &self.source, &mut u, opts)?;
        Ok(u)
    }
}

fn check_params(p: &ParameterVector) -> Result<()> {
    if p.tag != ProblemTag::Heat || p.values.len() != 4 {
        return Err(CoreError::mismatch("heat parameter", "4 heat diffusion values", format!("{p:?}")));
    }
    if p.values.iter().any(|&m| !(m > 0.0)) {
        return Err(CoreError::config("heat diffusion values must be positive"));
    }
    Ok(())
}

/// Steady state of the discrete problem for parameter `p`.
pub fn heat_steady_state<T: Real>(cfg: &HeatConfig, p: &ParameterVector) -> Result<Field<T>> {
    cfg.validate()?;
    check_params(p)?;
    let op = HeatOperator::<T>::new(cfg.grid, &p.values);
    Field::from_values(cfg.grid, cfg.grid, 1, op.steady_state(cfg.tolerance)?)
}

pub fn solve_heat<T: Real>(cfg: &HeatConfig, p: &ParameterVector) -> Result<Trajectory<T>> {
    cfg.validate()?;
    check_params(p)?;
    let n = cfg.grid;
    let op = HeatOperator::<T>::new(n, &p.values);
    let opts = CgOptions {
        relative_tolerance: cfg.tolerance,
        max_iterations: 50 * n * n,
        project_mean: false,
    };
    let mut u = vec![T::zero(); n * n];
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    states.push(Field::from_values(n, n, 1, u.clone())?);
    let mut rhs = vec![T::zero(); n * n];
    let dt = T::c(cfg.dt);
    let half = T::c(0.5);
    for step in 0..cfg.n_steps {
        if step < cfg.startup_steps {
            for _ in 0..2 {
                let tau = dt * half;
                for k in 0..n * n {
                    rhs[k] = u[k] + tau * op.source[k];
                }
                let mut next = u.clone();
                conjugate_gradient(|x, y| op.apply_shifted(T::one(), tau, x, y), &rhs, &mut next, opts)?;
                u = next;
            }
        } else {
            op.apply_shifted(T::one(), -dt * half, &u, &mut rhs);
            for k in 0..n * n {
                rhs[k] = rhs[k] + dt * op.source[k];
            }
            let mut next = u.clone();
            conjugate_gradient(|x, y| op.apply_shifted(T::one(), dt * half, x, y), &rhs, &mut next, opts)?;
            u = next;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Solver {
                solver: "heat",
                message: format!("non-finite state at step {}", step + 1),
            });
        }
        states.push(Field::from_values(n, n, 1, u.clone())?);
    }
    Ok(Trajectory {
        parameter: p.clone(),
        dt: cfg.dt,
        states,
    })
}

/// Averages 2×2 blocks of a square field onto the grid with half the cells.
pub fn restrict_by_two<T: Real>(f: &Field<T>) -> Field<T> {
    let (nx, ny) = (f.nx / 2, f.ny / 2);
    let mut out = Field::zeros(nx, ny, f.channels);
    let q = T::c(0.25);
    for c in 0..f.channels {
        for j in 0..ny {
            for i in 0..nx {
                let s = f.at(c, 2 * j, 2 * i)
                    + f.at(c, 2 * j, 2 * i + 1)
                    + f.at(c, 2 * j + 1, 2 * i)
                    + f.at(c, 2 * j + 1, 2 * i + 1);
                out.values[(c * ny + j) * nx + i] = q * s;
            }
        }
    }
    out
}
