//! Frobenius norm of the input Jacobian of a map and its parameter gradient,
//! computed by forward-over-reverse differentiation.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::network::{Gradients, LayerCache, Sequential};
use crate::{Dual, Scalar, Tensor};

/// A batched map `x -> y` with reverse-mode gradients for parameters and input.
pub trait Differentiable<T: Scalar> {
    type Tape;

    fn forward_tape(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Self::Tape)>;

    /// Returns parameter gradients and the input gradient of `sum(dy · y)`.
    fn backward_tape(&self, tape: &Self::Tape, dy: &Tensor<T>) -> Result<(Gradients<T>, Tensor<T>)>;
}

/// A map whose parameters can be promoted to dual numbers.
pub trait Liftable<T: Scalar>: Differentiable<T> {
    type Lifted: Differentiable<Dual<T>>;

    fn lift(&self) -> Self::Lifted;
}

impl<T: Scalar> Differentiable<T> for Sequential<T> {
    type Tape = Vec<LayerCache<T>>;

    fn forward_tape(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Self::Tape)> {
        self.forward_cached(x, false)
    }

    fn backward_tape(&self, tape: &Self::Tape, dy: &Tensor<T>) -> Result<(Gradients<T>, Tensor<T>)> {
        self.backward(tape, dy)
    }
}

impl<T: Scalar> Liftable<T> for Sequential<T> {
    type Lifted = Sequential<Dual<T>>;

    fn lift(&self) -> Sequential<Dual<T>> {
        self.map_scalar(Dual::constant)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyEstimator {
    /// One reverse pass per output coordinate.
    #[default]
    Exact,
    /// A single Rademacher probe per sample (unbiased for the squared norm).
    Hutchinson,
}

#[derive(Clone, Debug)]
pub struct Penalty<T> {
    /// Batch mean of `‖∂y/∂x_wrt‖_F`.
    pub mean: T,
    /// Per-sample norms.
    pub per_sample: Vec<T>,
    /// Gradient of `mean` with respect to the parameters.
    pub grads: Gradients<T>,
}

/// Computes the mean Jacobian norm over the batch with respect to the input
/// coordinates `wrt` (indices into each flattened batch item).
pub fn jacobian_penalty<T, M>(
    model: &M,
    x: &Tensor<T>,
    wrt: Range<usize>,
    estimator: PenaltyEstimator,
    seed: u64,
) -> Result<Penalty<T>>
where
    T: Scalar,
    M: Liftable<T>,
{
    let b = x.batch();
    let d = x.item_len();
    if wrt.end > d || wrt.start >= wrt.end {
        return Err(shape_err("jacobian input range", format!("within 0..{d}"), format!("{wrt:?}")));
    }
    let (y, tape) = model.forward_tape(x)?;
    let m = y.item_len();
    let out_shape = y.shape().to_vec();

    // Upstream probe vectors, each `[B, M]`.
    let probes: Vec<Vec<T>> = match estimator {
        PenaltyEstimator::Exact => (0..m)
            .map(|i| {
                let mut e = vec![T::zero(); b * m];
                for bi in 0..b {
                    e[bi * m + i] = T::one();
                }
                e
            })
            .collect(),
        PenaltyEstimator::Hutchinson => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            vec![(0..b * m)
                .map(|_| if rng.random_bool(0.5) { T::one() } else { -T::one() })
                .collect()]
        }
    };

    // rows[p][bi] = restricted input gradient of probe p at sample bi.
    let w = wrt.len();
    let mut rows = Vec::with_capacity(probes.len());
    let mut sq = vec![T::zero(); b];
    for probe in &probes {
        let dy = Tensor::new(out_shape.clone(), probe.clone())?;
        let (_, gx) = model.backward_tape(&tape, &dy)?;
        let mut r = vec![T::zero(); b * w];
        for bi in 0..b {
            let src = &gx.data()[bi * d + wrt.start..bi * d + wrt.end];
            r[bi * w..(bi + 1) * w].copy_from_slice(src);
            sq[bi] += src.iter().fold(T::zero(), |a, &v| a + v * v);
        }
        rows.push(r);
    }
    let per_sample: Vec<T> = sq.iter().map(|&s| s.sqrt()).collect();
    let bt = T::lit(b as f64);
    let mean = per_sample.iter().fold(T::zero(), |a, &v| a + v) / bt;

    let lifted = model.lift();
    let mut grads: Option<Gradients<T>> = None;
    for (probe, r) in probes.iter().zip(&rows) {
        let xd = Tensor::from_fn(x.shape().to_vec(), |k| {
            let (bi, j) = (k / d, k % d);
            let eps = if wrt.contains(&j) { r[bi * w + j - wrt.start] } else { T::zero() };
            Dual::new(x.data()[k], eps)
        });
        let (yd, tape_d) = lifted.forward_tape(&xd)?;
        let up = Tensor::from_fn(yd.shape().to_vec(), |k| {
            let bi = k / m;
            let p = per_sample[bi];
            let wgt = if p > T::zero() { probe[k] / (p * bt) } else { T::zero() };
            Dual::constant(wgt)
        });
        let (gd, _) = lifted.backward_tape(&tape_d, &up)?;
        let acc = grads.get_or_insert_with(|| gd.iter().map(|blk| vec![T::zero(); blk.len()]).collect());
        for (a, g) in acc.iter_mut().zip(&gd) {
            for (av, gv) in a.iter_mut().zip(g) {
                *av += gv.eps;
            }
        }
    }
    Ok(Penalty {
        mean,
        per_sample,
        grads: grads.unwrap_or_default(),
    })
}
