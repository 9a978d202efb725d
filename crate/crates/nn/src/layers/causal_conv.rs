use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};
use crate::{Activation, Scalar, Tensor};

/// 1-D convolution over time for channels-last sequences `[B, T, C]`.
///
/// `y[t] = σ(b + Σ_k W[:, :, k] · x[t·stride + k - left_pad])` with zeros for
/// negative time indices. With `stride = 1` and `left_pad = K - 1` output `t`
/// sees inputs `t-K+1..=t` only; with `stride = K` and no padding the layer
/// halves (for `K = 2`) the sequence, each output summarizing a disjoint block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalConv1dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_length: usize,
    pub left_pad: usize,
    pub stride: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct CausalConv1d<T> {
    pub spec: CausalConv1dSpec,
    /// `[W (out×in×K) | bias (out)]`.
    pub params: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct CausalConv1dCache<T> {
    input: Tensor<T>,
    z: Vec<T>,
    y: Vec<T>,
}

impl<T: Scalar> CausalConv1d<T> {
    pub fn new(spec: CausalConv1dSpec) -> Result<Self> {
        if spec.kernel_length == 0 || spec.stride == 0 || spec.in_channels == 0 || spec.out_channels == 0 {
            return Err(NnError::Config(format!("invalid causal conv spec {spec:?}")));
        }
        let n = spec.out_channels * spec.in_channels * spec.kernel_length + spec.out_channels;
        Ok(Self {
            spec,
            params: vec![T::zero(); n],
        })
    }

    pub fn output_len(&self, t: usize) -> Option<usize> {
        let padded = t + self.spec.left_pad;
        (padded >= self.spec.kernel_length).then(|| (padded - self.spec.kernel_length) / self.spec.stride + 1)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || {
            shape_err(
                "causal conv input",
                format!("[B, T>=..., {}]", self.spec.in_channels),
                format!("{input:?}"),
            )
        };
        if input.len() != 3 || input[2] != self.spec.in_channels {
            return Err(bad());
        }
        let tout = self.output_len(input[1]).ok_or_else(bad)?;
        Ok(vec![input[0], tout, self.spec.out_channels])
    }

    #[inline]
    fn widx(&self, co: usize, ci: usize, k: usize) -> usize {
        (co * self.spec.in_channels + ci) * self.spec.kernel_length + k
    }

    /// Source time index for output `t` and tap `k`, if not in the zero padding.
    #[inline]
    fn src(&self, t: usize, k: usize, steps: usize) -> Option<usize> {
        let p = t * self.spec.stride + k;
        (p >= self.spec.left_pad && p - self.spec.left_pad < steps).then(|| p - self.spec.left_pad)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, CausalConv1dCache<T>)> {
        let out_shape = self.output_shape(x.shape())?;
        let (batch, steps, cin) = (x.shape()[0], x.shape()[1], self.spec.in_channels);
        let (tout, cout) = (out_shape[1], self.spec.out_channels);
        let bias_off = cout * cin * self.spec.kernel_length;
        let xd = x.data();
        let mut z = vec![T::zero(); batch * tout * cout];
        for b in 0..batch {
            for t in 0..tout {
                let zr = &mut z[(b * tout + t) * cout..(b * tout + t + 1) * cout];
                for (co, zv) in zr.iter_mut().enumerate() {
                    let mut acc = self.params[bias_off + co];
                    for k in 0..self.spec.kernel_length {
                        if let Some(s) = self.src(t, k, steps) {
                            let xr = &xd[(b * steps + s) * cin..(b * steps + s + 1) * cin];
                            for (ci, &xv) in xr.iter().enumerate() {
                                acc += self.params[self.widx(co, ci, k)] * xv;
                            }
                        }
                    }
                    *zv = acc;
                }
            }
        }
        let y = self.spec.activation.apply_all(&z);
        let out = Tensor::new(out_shape, y.clone())?;
        Ok((out, CausalConv1dCache { input: x.clone(), z, y }))
    }

    pub fn backward(&self, cache: &CausalConv1dCache<T>, dy: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let x = &cache.input;
        let (batch, steps, cin) = (x.shape()[0], x.shape()[1], self.spec.in_channels);
        let cout = self.spec.out_channels;
        if dy.len() != cache.z.len() {
            return Err(shape_err("causal conv upstream gradient", cache.z.len(), dy.len()));
        }
        let tout = cache.z.len() / (batch * cout);
        let bias_off = cout * cin * self.spec.kernel_length;
        let mut dz = dy.data().to_vec();
        self.spec.activation.backprop(&cache.z, &cache.y, &mut dz);
        let xd = x.data();
        let mut grads = vec![T::zero(); self.params.len()];
        let mut dx = vec![T::zero(); x.len()];
        for b in 0..batch {
            for t in 0..tout {
                for co in 0..cout {
                    let d = dz[(b * tout + t) * cout + co];
                    grads[bias_off + co] += d;
                    for k in 0..self.spec.kernel_length {
                        if let Some(s) = self.src(t, k, steps) {
                            let base = (b * steps + s) * cin;
                            for ci in 0..cin {
                                let wi = self.widx(co, ci, k);
                                grads[wi] += d * xd[base + ci];
                                dx[base + ci] += d * self.params[wi];
                            }
                        }
                    }
                }
            }
        }
        Ok((grads, Tensor::new(x.shape().to_vec(), dx)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_lengths() {
        let c = CausalConv1d::<f64>::new(CausalConv1dSpec {
            in_channels: 1,
            out_channels: 1,
            kernel_length: 2,
            left_pad: 0,
            stride: 2,
            activation: Activation::Linear,
        })
        .unwrap();
        assert_eq!(c.output_len(16), Some(8));
        assert_eq!(c.output_len(2), Some(1));
        assert_eq!(c.output_len(1), None);
    }
}
