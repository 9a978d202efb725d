//! Rigid rotation of a Gaussian about the centre of the unit square,
//! `u_t + b·∇u = 0` with `b = μ₁(-(y-½), x-½)`, solved semi-Lagrangian with
//! an exact back-trace along the circular characteristics.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::field::{Field, ParameterVector, ProblemTag, Real, Trajectory};

pub const CENTER: f64 = 0.5;
pub const START_RADIUS: f64 = 0.25;
pub const GAUSSIAN_WIDTH: f64 = 0.005;
/// Largest distance of a domain point from the rotation centre.
pub const R_MAX: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
    /// Tensor-product cubic Lagrange on a 4×4 stencil.
    #[default]
    Cubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvectionConfig {
    pub grid: usize,
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl Default for AdvectionConfig {
    fn default() -> Self {
        Self {
            grid: 60,
            dt: 0.0075,
            n_steps: 840,
            interpolation: Interpolation::Cubic,
        }
    }
}

impl AdvectionConfig {
    pub fn cfl(&self, mu1: f64) -> f64 {
        mu1.abs() * R_MAX * self.dt * self.grid as f64
    }

    pub fn validate(&self, mu1: f64) -> Result<()> {
        if self.grid < 4 {
            return Err(CoreError::config(format!("advection grid must be >= 4, got {}", self.grid)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() || self.n_steps == 0 {
            return Err(CoreError::config("advection dt and n_steps must be positive"));
        }
        let cfl = self.cfl(mu1);
        if cfl > 1.0 {
            return Err(CoreError::config(format!("advection CFL number {cfl:.3} exceeds 1")));
        }
        Ok(())
    }
}

fn check_params(p: &ParameterVector) -> Result<(f64, f64)> {
    if p.tag != ProblemTag::Advection || p.values.len() != 2 {
        return Err(CoreError::mismatch("advection parameter", "(speed, angle)", format!("{p:?}")));
    }
    Ok((p.values[0], p.values[1]))
}

fn gaussian(x: f64, y: f64, x0: f64, y0: f64) -> f64 {
    (-0.5 * ((x - x0).powi(2) + (y - y0).powi(2)) / GAUSSIAN_WIDTH).exp()
}

/// Analytic solution at time `t` sampled at the cell centres.
pub fn advection_exact<T: Real>(grid: usize, p: &ParameterVector, t: f64) -> Result<Field<T>> {
    let (mu1, mu2) = check_params(p)?;
    let (x0, y0) = (START_RADIUS * mu2.cos() + CENTER, START_RADIUS * mu2.sin() + CENTER);
    let (s, c) = (-mu1 * t).sin_cos();
    let mut f = Field::zeros(grid, grid, 1);
    for j in 0..grid {
        for i in 0..grid {
            let (x, y) = f.center(i, j);
            let (dx, dy) = (x - CENTER, y - CENTER);
            let (xr, yr) = (c * dx - s * dy + CENTER, s * dx + c * dy + CENTER);
            f.values[j * grid + i] = T::c(gaussian(xr, yr, x0, y0));
        }
    }
    Ok(f)
}

#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// One semi-Lagrangian step: `out(x) = u(departure(x))`, zero outside.
fn sl_step<T: Real>(n: usize, u: &[T], out: &mut [T], cos: f64, sin: f64, interp: Interpolation) {
    let nf = n as f64;
    let ni = n as isize;
    let get = |i: isize, j: isize| -> T {
        if i < 0 || j < 0 || i >= ni || j >= ni {
            T::zero()
        } else {
            u[j as usize * n + i as usize]
        }
    };
    for j in 0..n {
        let dy = (j as f64 + 0.5) / nf - CENTER;
        for i in 0..n {
            let dx = (i as f64 + 0.5) / nf - CENTER;
            let xd = cos * dx - sin * dy + CENTER;
            let yd = sin * dx + cos * dy + CENTER;
            let (sx, sy) = (xd * nf - 0.5, yd * nf - 0.5);
            let (fx, fy) = (sx.floor(), sy.floor());
            let (tx, ty) = (sx - fx, sy - fy);
            let (i0, j0) = (fx as isize, fy as isize);
            let v = match interp {
                Interpolation::Bilinear => {
                    let (tx, ty) = (T::c(tx), T::c(ty));
                    let one = T::one();
                    (one - ty) * ((one - tx) * get(i0, j0) + tx * get(i0 + 1, j0))
                        + ty * ((one - tx) * get(i0, j0 + 1) + tx * get(i0 + 1, j0 + 1))
                }
                Interpolation::Cubic => {
                    let wx = cubic_weights(tx);
                    let wy = cubic_weights(ty);
                    let inside = i0 >= 1 && j0 >= 1 && i0 + 2 < ni && j0 + 2 < ni;
                    let mut acc = T::zero();
                    for (b, &wyb) in wy.iter().enumerate() {
                        let jj = j0 - 1 + b as isize;
                        let mut row = T::zero();
                        if inside {
                            let base = jj as usize * n + (i0 - 1) as usize;
                            for a in 0..4 {
                                row = row + T::c(wx[a]) * u[base + a];
                            }
                        } else {
                            for (a, &wxa) in wx.iter().enumerate() {
                                row = row + T::c(wxa) * get(i0 - 1 + a as isize, jj);
                            }
                        }
                        acc = acc + T::c(wyb) * row;
                    }
                    acc
                }
            };
            out[j * n + i] = v;
        }
    }
}

pub fn solve_advection<T: Real>(cfg: &AdvectionConfig, p: &ParameterVector) -> Result<Trajectory<T>> {
    let (mu1, _) = check_params(p)?;
    cfg.validate(mu1)?;
    let n = cfg.grid;
    let u0: Field<T> = advection_exact(n, p, 0.0)?;
    let (sin, cos) = (-mu1 * cfg.dt).sin_cos();
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    let mut u = u0.values.clone();
    let mut next = vec![T::zero(); n * n];
    states.push(u0);
    for _ in 0..cfg.n_steps {
        sl_step(n, &u, &mut next, cos, sin, cfg.interpolation);
        std::mem::swap(&mut u, &mut next);
        states.push(Field::from_values(n, n, 1, u.clone())?);
    }
    Ok(Trajectory {
        parameter: p.clone(),
        dt: cfg.dt,
        states,
    })
}
