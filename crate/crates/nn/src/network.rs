use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};
use crate::layers::*;
use crate::{Scalar, Tensor};

/// Serializable description of one layer, without its numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense(DenseSpec),
    Conv2d(Conv2dSpec),
    BatchNorm(BatchNormSpec),
    Lstm(LstmSpec),
    CausalConv1d(CausalConv1dSpec),
    /// Reshape each batch item to `shape`.
    Reshape { shape: Vec<usize> },
    /// `[B, T, F] -> [B, F]`, keeping the final time step.
    LastStep,
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Lstm(Lstm<T>),
    CausalConv1d(CausalConv1d<T>),
    Reshape(Vec<usize>),
    LastStep,
}

#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    Dense(DenseCache<T>),
    Conv2d(Conv2dCache<T>),
    BatchNorm(BatchNormCache<T>),
    Lstm(LstmCache<T>),
    CausalConv1d(CausalConv1dCache<T>),
    Shape(Vec<usize>),
}

impl<T: Scalar> Layer<T> {
    pub fn from_spec(spec: LayerSpec) -> Result<Self> {
        Ok(match spec {
            LayerSpec::Dense(s) => Layer::Dense(Dense::new(s)),
            LayerSpec::Conv2d(s) => Layer::Conv2d(Conv2d::new(s)?),
            LayerSpec::BatchNorm(s) => Layer::BatchNorm(BatchNorm::new(s)),
            LayerSpec::Lstm(s) => Layer::Lstm(Lstm::new(s)),
            LayerSpec::CausalConv1d(s) => Layer::CausalConv1d(CausalConv1d::new(s)?),
            LayerSpec::Reshape { shape } => Layer::Reshape(shape),
            LayerSpec::LastStep => Layer::LastStep,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(l) => LayerSpec::Dense(l.spec.clone()),
            Layer::Conv2d(l) => LayerSpec::Conv2d(l.spec.clone()),
            Layer::BatchNorm(l) => LayerSpec::BatchNorm(l.spec.clone()),
            Layer::Lstm(l) => LayerSpec::Lstm(l.spec.clone()),
            Layer::CausalConv1d(l) => LayerSpec::CausalConv1d(l.spec.clone()),
            Layer::Reshape(s) => LayerSpec::Reshape { shape: s.clone() },
            Layer::LastStep => LayerSpec::LastStep,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Lstm(_) => "lstm",
            Layer::CausalConv1d(_) => "causal_conv1d",
            Layer::Reshape(_) => "reshape",
            Layer::LastStep => "last_step",
        }
    }

    /// Trainable parameters (empty for shape-only layers).
    pub fn params(&self) -> &[T] {
        match self {
            Layer::Dense(l) => &l.params,
            Layer::Conv2d(l) => &l.params,
            Layer::BatchNorm(l) => &l.params,
            Layer::Lstm(l) => &l.params,
            Layer::CausalConv1d(l) => &l.params,
            Layer::Reshape(_) | Layer::LastStep => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        match self {
            Layer::Dense(l) => &mut l.params,
            Layer::Conv2d(l) => &mut l.params,
            Layer::BatchNorm(l) => &mut l.params,
            Layer::Lstm(l) => &mut l.params,
            Layer::CausalConv1d(l) => &mut l.params,
            Layer::Reshape(_) | Layer::LastStep => &mut [],
        }
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<(Tensor<T>, LayerCache<T>)> {
        match self {
            Layer::Dense(l) => l.forward(x).map(|(y, c)| (y, LayerCache::Dense(c))),
            Layer::Conv2d(l) => l.forward(x).map(|(y, c)| (y, LayerCache::Conv2d(c))),
            Layer::BatchNorm(l) => l.forward(x, training).map(|(y, c)| (y, LayerCache::BatchNorm(c))),
            Layer::Lstm(l) => l.forward(x).map(|(y, c)| (y, LayerCache::Lstm(c))),
            Layer::CausalConv1d(l) => l.forward(x).map(|(y, c)| (y, LayerCache::CausalConv1d(c))),
            Layer::Reshape(shape) => {
                let mut full = vec![x.batch()];
                full.extend_from_slice(shape);
                let y = x.clone().reshape(full)?;
                Ok((y, LayerCache::Shape(x.shape().to_vec())))
            }
            Layer::LastStep => {
                let s = x.shape();
                if s.len() != 3 {
                    return Err(shape_err("last-step input", "[B, T, F]", format!("{s:?}")));
                }
                let (b, t, f) = (s[0], s[1], s[2]);
                let mut out = Vec::with_capacity(b * f);
                for bi in 0..b {
                    let base = (bi * t + t - 1) * f;
                    out.extend_from_slice(&x.data()[base..base + f]);
                }
                Ok((Tensor::new(vec![b, f], out)?, LayerCache::Shape(s.to_vec())))
            }
        }
    }

    pub fn backward(&self, cache: &LayerCache<T>, dy: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        match (self, cache) {
            (Layer::Dense(l), LayerCache::Dense(c)) => l.backward(c, dy),
            (Layer::Conv2d(l), LayerCache::Conv2d(c)) => l.backward(c, dy),
            (Layer::BatchNorm(l), LayerCache::BatchNorm(c)) => l.backward(c, dy),
            (Layer::Lstm(l), LayerCache::Lstm(c)) => l.backward(c, dy),
            (Layer::CausalConv1d(l), LayerCache::CausalConv1d(c)) => l.backward(c, dy),
            (Layer::Reshape(_), LayerCache::Shape(s)) => Ok((Vec::new(), dy.clone().reshape(s.clone())?)),
            (Layer::LastStep, LayerCache::Shape(s)) => {
                let (b, t, f) = (s[0], s[1], s[2]);
                if dy.len() != b * f {
                    return Err(shape_err("last-step upstream gradient", b * f, dy.len()));
                }
                let mut dx = vec![T::zero(); b * t * f];
                for bi in 0..b {
                    let base = (bi * t + t - 1) * f;
                    dx[base..base + f].copy_from_slice(&dy.data()[bi * f..(bi + 1) * f]);
                }
                Ok((Vec::new(), Tensor::new(s.clone(), dx)?))
            }
            _ => Err(NnError::Config(format!("cache does not belong to a {} layer", self.kind()))),
        }
    }

    pub fn map_scalar<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> Layer<U> {
        let conv = |p: &[T]| p.iter().map(|&v| f(v)).collect::<Vec<U>>();
        match self {
            Layer::Dense(l) => Layer::Dense(Dense {
                spec: l.spec.clone(),
                params: conv(&l.params),
            }),
            Layer::Conv2d(l) => Layer::Conv2d(Conv2d {
                spec: l.spec.clone(),
                params: conv(&l.params),
            }),
            Layer::BatchNorm(l) => Layer::BatchNorm(BatchNorm {
                spec: l.spec.clone(),
                params: conv(&l.params),
                running_mean: conv(&l.running_mean),
                running_var: conv(&l.running_var),
            }),
            Layer::Lstm(l) => Layer::Lstm(Lstm {
                spec: l.spec.clone(),
                params: conv(&l.params),
            }),
            Layer::CausalConv1d(l) => Layer::CausalConv1d(CausalConv1d {
                spec: l.spec.clone(),
                params: conv(&l.params),
            }),
            Layer::Reshape(s) => Layer::Reshape(s.clone()),
            Layer::LastStep => Layer::LastStep,
        }
    }
}

/// Ordered list of layers evaluated front to back.
#[derive(Clone, Debug, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

/// Per-layer parameter gradients, aligned with [`Sequential::layers`].
pub type Gradients<T> = Vec<Vec<T>>;

impl<T: Scalar> Sequential<T> {
    pub fn from_specs(specs: impl IntoIterator<Item = LayerSpec>) -> Result<Self> {
        let layers = specs.into_iter().map(Layer::from_spec).collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Shape trace for an input item shape (without batch axis); fails on the
    /// first incompatible layer.
    pub fn output_item_shape(&self, item: &[usize]) -> Result<Vec<usize>> {
        let mut shape = vec![1];
        shape.extend_from_slice(item);
        let probe = Tensor::<T>::zeros(shape);
        let (y, _) = self.forward_cached(&probe, false)?;
        Ok(y.shape()[1..].to_vec())
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(&cur, training)?.0;
            check_finite(&cur, i, layer, "forward")?;
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &Tensor<T>, training: bool) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward(&cur, training)?;
            check_finite(&y, i, layer, "forward")?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    /// Reverse pass: gradients for every layer's parameters and for the input.
    pub fn backward(&self, caches: &[LayerCache<T>], dy: &Tensor<T>) -> Result<(Gradients<T>, Tensor<T>)> {
        if caches.len() != self.layers.len() {
            return Err(shape_err("backward caches", self.layers.len(), caches.len()));
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut cur = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let (g, dx) = layer.backward(&caches[i], &cur)?;
            if !g.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFinite {
                    layer: i,
                    kind: layer.kind(),
                    pass: "backward",
                });
            }
            check_finite(&dx, i, layer, "backward")?;
            grads[i] = g;
            cur = dx;
        }
        Ok((grads, cur))
    }

    /// Folds training-mode batch statistics into every batch-norm layer.
    pub fn update_running_stats(&mut self, caches: &[LayerCache<T>]) {
        for (layer, cache) in self.layers.iter_mut().zip(caches) {
            if let (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) = (layer, cache) {
                bn.update_running(c);
            }
        }
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.params().len()).sum()
    }

    pub fn param_blocks(&self) -> Vec<&[T]> {
        self.layers.iter().map(|l| l.params()).collect()
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().map(|l| l.params_mut()).collect()
    }

    pub fn sum_sq_params(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.params().iter())
            .fold(T::zero(), |a, &v| a + v * v)
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.layers.iter().map(|l| vec![T::zero(); l.params().len()]).collect()
    }

    pub fn map_scalar<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> Sequential<U> {
        Sequential {
            layers: self.layers.iter().map(|l| l.map_scalar(f)).collect(),
        }
    }
}

fn check_finite<T: Scalar>(t: &Tensor<T>, i: usize, layer: &Layer<T>, pass: &'static str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite {
            layer: i,
            kind: layer.kind(),
            pass,
        })
    }
}

/// `acc += scale · g`, block by block.
pub fn accumulate<T: Scalar>(acc: &mut Gradients<T>, g: &Gradients<T>, scale: T) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, &y) in a.iter_mut().zip(b) {
            *x += scale * y;
        }
    }
}
