use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};
use crate::{Activation, Scalar, Tensor};

/// 2-D convolution over `[B, C, H, W]` with symmetric zero padding `(k-1)/2`.
///
/// Regular convolution (cross-correlation) maps an `H×W` input to
/// `ceil(H/s)×ceil(W/s)` for odd kernels. The transposed variant is the exact
/// adjoint of that map with the output cropped to `s·H × s·W`, so a stride-2
/// transposed conv doubles each spatial dimension; in the usual
/// `(n-1)s - 2p + k + output_padding` notation this is `p = (k-1)/2` with
/// output padding `s - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub transposed: bool,
    pub activation: Activation,
}

impl Conv2dSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.stride) {
            return Err(NnError::Config(format!("conv stride must be 1 or 2, got {}", self.stride)));
        }
        if self.kernel[0] % 2 == 0 || self.kernel[1] % 2 == 0 {
            return Err(NnError::Config(format!("conv kernel must be odd, got {:?}", self.kernel)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(NnError::Config("conv channels must be positive".into()));
        }
        Ok(())
    }

    fn pad(&self) -> [usize; 2] {
        [(self.kernel[0] - 1) / 2, (self.kernel[1] - 1) / 2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let s = self.stride;
        if self.transposed {
            (h * s, w * s)
        } else {
            let p = self.pad();
            (
                (h + 2 * p[0] - self.kernel[0]) / s + 1,
                (w + 2 * p[1] - self.kernel[1]) / s + 1,
            )
        }
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel[0] * self.kernel[1]
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub spec: Conv2dSpec,
    /// `[F (out×in×k₁×k₂) | bias (out)]`.
    pub params: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Conv2dCache<T> {
    input: Tensor<T>,
    z: Vec<T>,
    y: Vec<T>,
}

/// Strided-grid geometry shared by the regular and transposed directions:
/// a "small" index `a` touches the "big" index `a·s + k - p`.
#[derive(Clone, Copy)]
struct Geometry {
    small: [usize; 2],
    big: [usize; 2],
    stride: usize,
    pad: [usize; 2],
}

impl Geometry {
    /// Range of small indices whose big partner at kernel offset `k` is in bounds.
    #[inline]
    fn range(&self, axis: usize, k: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad[axis] as isize;
        let nb = self.big[axis] as isize;
        // a·s + off >= 0  and  a·s + off <= nb - 1
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = if nb - 1 - off < 0 { 0 } else { (nb - 1 - off) / s + 1 };
        let hi = hi.min(self.small[axis] as isize);
        (lo.max(0) as usize, hi.max(lo.max(0)) as usize)
    }

    /// Calls `f(small_offset, big_offset, len)` for each contiguous row segment
    /// of small/big pairs at kernel offset `(m, n)`. When `stride > 1` the big
    /// side is strided; `f` receives the stride through `self.stride`.
    #[inline]
    fn for_rows(&self, m: usize, n: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (ylo, yhi) = self.range(0, m);
        let (xlo, xhi) = self.range(1, n);
        if xhi <= xlo {
            return;
        }
        for ay in ylo..yhi {
            let by = ay * self.stride + m - self.pad[0];
            let bx = xlo * self.stride + n - self.pad[1];
            f(ay * self.small[1] + xlo, by * self.big[1] + bx, xhi - xlo);
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(spec: Conv2dSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.kernel_len() + spec.out_channels;
        Ok(Self {
            spec,
            params: vec![T::zero(); n],
        })
    }

    pub fn kernel(&self) -> &[T] {
        &self.params[..self.spec.kernel_len()]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 || input[1] != self.spec.in_channels {
            return Err(shape_err(
                "conv2d input",
                format!("[B, {}, H, W]", self.spec.in_channels),
                format!("{input:?}"),
            ));
        }
        let (h, w) = self.spec.output_hw(input[2], input[3]);
        Ok(vec![input[0], self.spec.out_channels, h, w])
    }

    fn geometry(&self, input: &[usize], output: &[usize]) -> Geometry {
        let (small, big) = if self.spec.transposed {
            ([input[2], input[3]], [output[2], output[3]])
        } else {
            ([output[2], output[3]], [input[2], input[3]])
        };
        Geometry {
            small,
            big,
            stride: self.spec.stride,
            pad: self.spec.pad(),
        }
    }

    #[inline]
    fn kidx(&self, co: usize, ci: usize, m: usize, n: usize) -> usize {
        let [k1, k2] = self.spec.kernel;
        ((co * self.spec.in_channels + ci) * k1 + m) * k2 + n
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Conv2dCache<T>)> {
        let out_shape = self.output_shape(x.shape())?;
        let g = self.geometry(x.shape(), &out_shape);
        let (cin, cout) = (self.spec.in_channels, self.spec.out_channels);
        let [k1, k2] = self.spec.kernel;
        let in_plane = x.shape()[2] * x.shape()[3];
        let out_plane = out_shape[2] * out_shape[3];
        let batch = x.shape()[0];
        let s = self.spec.stride;
        let bias = &self.params[self.spec.kernel_len()..];
        let xd = x.data();
        let mut z = vec![T::zero(); batch * cout * out_plane];
        for b in 0..batch {
            for co in 0..cout {
                let zp = &mut z[(b * cout + co) * out_plane..(b * cout + co + 1) * out_plane];
                zp.iter_mut().for_each(|v| *v = bias[co]);
                for ci in 0..cin {
                    let xp = &xd[(b * cin + ci) * in_plane..(b * cin + ci + 1) * in_plane];
                    for m in 0..k1 {
                        for n in 0..k2 {
                            let w = self.params[self.kidx(co, ci, m, n)];
                            if self.spec.transposed {
                                g.for_rows(m, n, |so, bo, len| {
                                    for t in 0..len {
                                        zp[bo + t * s] += w * xp[so + t];
                                    }
                                });
                            } else {
                                g.for_rows(m, n, |so, bo, len| {
                                    for t in 0..len {
                                        zp[so + t] += w * xp[bo + t * s];
                                    }
                                });
                            }
                        }
                    }
                }
            }
        }
        let y = self.spec.activation.apply_all(&z);
        let out = Tensor::new(out_shape, y.clone())?;
        Ok((out, Conv2dCache { input: x.clone(), z, y }))
    }

    pub fn backward(&self, cache: &Conv2dCache<T>, dy: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let x = &cache.input;
        let out_shape = self.output_shape(x.shape())?;
        if dy.len() != cache.z.len() {
            return Err(shape_err("conv2d upstream gradient", cache.z.len(), dy.len()));
        }
        let g = self.geometry(x.shape(), &out_shape);
        let (cin, cout) = (self.spec.in_channels, self.spec.out_channels);
        let [k1, k2] = self.spec.kernel;
        let in_plane = x.shape()[2] * x.shape()[3];
        let out_plane = out_shape[2] * out_shape[3];
        let batch = x.shape()[0];
        let s = self.spec.stride;
        let mut dz = dy.data().to_vec();
        self.spec.activation.backprop(&cache.z, &cache.y, &mut dz);
        let klen = self.spec.kernel_len();
        let mut grads = vec![T::zero(); self.params.len()];
        let mut dx = vec![T::zero(); x.len()];
        let xd = x.data();
        for b in 0..batch {
            for co in 0..cout {
                let dzp = &dz[(b * cout + co) * out_plane..(b * cout + co + 1) * out_plane];
                let db: T = dzp.iter().copied().sum();
                grads[klen + co] += db;
                for ci in 0..cin {
                    let xp = &xd[(b * cin + ci) * in_plane..(b * cin + ci + 1) * in_plane];
                    let dxp = &mut dx[(b * cin + ci) * in_plane..(b * cin + ci + 1) * in_plane];
                    for m in 0..k1 {
                        for n in 0..k2 {
                            let ki = self.kidx(co, ci, m, n);
                            let w = self.params[ki];
                            let mut gw = T::zero();
                            if self.spec.transposed {
                                g.for_rows(m, n, |so, bo, len| {
                                    for t in 0..len {
                                        let d = dzp[bo + t * s];
                                        dxp[so + t] += w * d;
                                        gw += xp[so + t] * d;
                                    }
                                });
                            } else {
                                g.for_rows(m, n, |so, bo, len| {
                                    for t in 0..len {
                                        let d = dzp[so + t];
                                        dxp[bo + t * s] += w * d;
                                        gw += xp[bo + t * s] * d;
                                    }
                                });
                            }
                            grads[ki] += gw;
                        }
                    }
                }
            }
        }
        Ok((grads, Tensor::new(x.shape().to_vec(), dx)?))
    }
}
