use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Per-step mean relative error over a set of test cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    /// Stored-step indices that entered the curve.
    pub steps: Vec<usize>,
    pub mre: Vec<f64>,
    /// Sample standard deviation over cases divided by `sqrt(N)`.
    pub stderr: Vec<f64>,
    /// Steps skipped because some reference state has zero norm.
    pub excluded: Vec<usize>,
    pub time_averaged: f64,
    pub n_cases: usize,
}

impl ErrorCurve {
    /// `step,mre,stderr` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,mre,stderr\n");
        for ((n, m), e) in self.steps.iter().zip(&self.mre).zip(&self.stderr) {
            s.push_str(&format!("{n},{m:e},{e:e}\n"));
        }
        s
    }
}

/// `‖u − ũ‖² / ‖u‖²`, or `None` for a zero reference.
pub fn relative_error_sq(reference: &[f64], approx: &[f64]) -> Option<f64> {
    let den: f64 = reference.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return None;
    }
    let num: f64 = reference.iter().zip(approx).map(|(a, b)| (a - b) * (a - b)).sum();
    Some(num / den)
}

/// Mean and standard error of a sample (standard error 0 for one item).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / n.sqrt())
}

/// MRE curve with `reference[case][step]` and `approx[case][step]` flat
/// state vectors; case trajectories must share their length.
pub fn mre_curve<R: AsRef<[f64]>, A: AsRef<[f64]>>(reference: &[Vec<R>], approx: &[Vec<A>]) -> Result<ErrorCurve> {
    if reference.is_empty() {
        return Err(CoreError::config("error curve needs at least one test case"));
    }
    if reference.len() != approx.len() {
        return Err(CoreError::mismatch("error curve case count", reference.len(), approx.len()));
    }
    let steps = reference[0].len();
    for (r, a) in reference.iter().zip(approx) {
        if r.len() != steps || a.len() != steps {
            return Err(CoreError::mismatch("error curve step count", steps, format!("{}/{}", r.len(), a.len())));
        }
    }
    let mut curve = ErrorCurve {
        steps: Vec::new(),
        mre: Vec::new(),
        stderr: Vec::new(),
        excluded: Vec::new(),
        time_averaged: 0.0,
        n_cases: reference.len(),
    };
    for n in 0..steps {
        let errs: Option<Vec<f64>> = reference
            .iter()
            .zip(approx)
            .map(|(r, a)| {
                let (r, a) = (r[n].as_ref(), a[n].as_ref());
                if r.len() != a.len() {
                    return None;
                }
                relative_error_sq(r, a)
            })
            .collect();
        match errs {
            Some(e) => {
                let (m, s) = mean_stderr(&e);
                curve.steps.push(n);
                curve.mre.push(m);
                curve.stderr.push(s);
            }
            None => curve.excluded.push(n),
        }
    }
    if curve.mre.is_empty() {
        return Err(CoreError::config("every step has a zero-norm reference state"));
    }
    curve.time_averaged = curve.mre.iter().sum::<f64>() / curve.mre.len() as f64;
    Ok(curve)
}
