use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::{Activation, Scalar, Tensor};

/// Affine map on the last axis followed by an element-wise activation.
/// Any leading axes are treated as batch, so a `[B, T, F]` input is the
/// time-distributed application of the same layer to every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
    #[serde(default = "yes")]
    pub bias: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug)]
pub struct Dense<T> {
    pub spec: DenseSpec,
    /// `[W (out×in, row-major) | b (out)]`; `b` is absent when `spec.bias` is false.
    pub params: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    input: Tensor<T>,
    z: Vec<T>,
    y: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(spec: DenseSpec) -> Self {
        let n = spec.out_width * spec.in_width + if spec.bias { spec.out_width } else { 0 };
        Self {
            spec,
            params: vec![T::zero(); n],
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.params[..self.spec.out_width * self.spec.in_width]
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        let n = self.spec.out_width * self.spec.in_width;
        &mut self.params[..n]
    }

    pub fn bias(&self) -> &[T] {
        &self.params[self.spec.out_width * self.spec.in_width..]
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        let n = self.spec.out_width * self.spec.in_width;
        &mut self.params[n..]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input.last() {
            Some(&w) if w == self.spec.in_width && input.len() >= 2 => {
                let mut s = input.to_vec();
                *s.last_mut().unwrap() = self.spec.out_width;
                Ok(s)
            }
            _ => Err(shape_err(
                "dense input",
                format!("[.., {}]", self.spec.in_width),
                format!("{input:?}"),
            )),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
        let out_shape = self.output_shape(x.shape())?;
        let (nin, nout) = (self.spec.in_width, self.spec.out_width);
        let rows = x.len() / nin;
        let w = self.weights();
        let b = self.bias();
        let xd = x.data();
        let mut z = vec![T::zero(); rows * nout];
        for r in 0..rows {
            let xr = &xd[r * nin..(r + 1) * nin];
            let zr = &mut z[r * nout..(r + 1) * nout];
            for (o, zo) in zr.iter_mut().enumerate() {
                let wo = &w[o * nin..(o + 1) * nin];
                let mut acc = if self.spec.bias { b[o] } else { T::zero() };
                for (&wi, &xi) in wo.iter().zip(xr) {
                    acc += wi * xi;
                }
                *zo = acc;
            }
        }
        let y = self.spec.activation.apply_all(&z);
        let out = Tensor::new(out_shape, y.clone())?;
        Ok((out, DenseCache { input: x.clone(), z, y }))
    }

    pub fn backward(&self, cache: &DenseCache<T>, dy: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let (nin, nout) = (self.spec.in_width, self.spec.out_width);
        if dy.len() != cache.z.len() {
            return Err(shape_err("dense upstream gradient", cache.z.len(), dy.len()));
        }
        let mut dz = dy.data().to_vec();
        self.spec.activation.backprop(&cache.z, &cache.y, &mut dz);
        let rows = dz.len() / nout;
        let xd = cache.input.data();
        let w = self.weights();
        let mut grads = vec![T::zero(); self.params.len()];
        let mut dx = vec![T::zero(); rows * nin];
        {
            let (gw, gb) = grads.split_at_mut(nout * nin);
            for r in 0..rows {
                let xr = &xd[r * nin..(r + 1) * nin];
                let dzr = &dz[r * nout..(r + 1) * nout];
                let dxr = &mut dx[r * nin..(r + 1) * nin];
                for (o, &g) in dzr.iter().enumerate() {
                    if self.spec.bias {
                        gb[o] += g;
                    }
                    let gwo = &mut gw[o * nin..(o + 1) * nin];
                    let wo = &w[o * nin..(o + 1) * nin];
                    for i in 0..nin {
                        gwo[i] += g * xr[i];
                        dxr[i] += g * wo[i];
                    }
                }
            }
        }
        Ok((grads, Tensor::new(cache.input.shape().to_vec(), dx)?))
    }
}
