use crate::error::{CoreError, Result};
use crate::field::Real;

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    pub relative_tolerance: f64,
    pub max_iterations: usize,
    /// Remove the mean from the right-hand side and iterates (for pure
    /// Neumann operators whose kernel is the constants).
    pub project_mean: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-10,
            max_iterations: 10_000,
            project_mean: false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn remove_mean<T: Real>(v: &mut [T]) {
    let m = v.iter().copied().sum::<T>() / T::c(v.len() as f64);
    v.iter_mut().for_each(|x| *x = *x - m);
}

/// Matrix-free conjugate gradients for a symmetric positive (semi-)definite
/// operator; `x` holds the initial guess and receives the solution.
pub fn conjugate_gradient<T: Real>(
    apply: impl Fn(&[T], &mut [T]),
    b: &[T],
    x: &mut [T],
    opts: CgOptions,
) -> Result<CgStats> {
    let n = b.len();
    let mut rhs = b.to_vec();
    if opts.project_mean {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let bnorm = dot(&rhs, &rhs).sqrt();
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let tol = T::c(opts.relative_tolerance) * bnorm;
    let mut ax = vec![T::zero(); n];
    apply(x, &mut ax);
    let mut r: Vec<T> = rhs.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
    if opts.project_mean {
        remove_mean(&mut r);
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![T::zero(); n];
    for it in 0..opts.max_iterations {
        if rr.sqrt() <= tol {
            return Ok(CgStats {
                iterations: it,
                relative_residual: (rr.sqrt() / bnorm).to_f64().unwrap_or(f64::NAN),
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] = x[k] + alpha * p[k];
            r[k] = r[k] - alpha * ap[k];
        }
        if opts.project_mean {
            remove_mean(&mut r);
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    let rel = (rr.sqrt() / bnorm).to_f64().unwrap_or(f64::NAN);
    if rel <= opts.relative_tolerance {
        return Ok(CgStats {
            iterations: opts.max_iterations,
            relative_residual: rel,
        });
    }
    Err(CoreError::NotConverged {
        iterations: opts.max_iterations,
        residual: rel,
    })
}
