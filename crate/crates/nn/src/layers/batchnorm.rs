use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::{Scalar, Tensor};

/// Per-channel batch normalization over `[B, C, ...]`.
///
/// Training mode normalizes with (biased) batch statistics; inference mode
/// uses the running statistics `r ← momentum·r + (1 - momentum)·batch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormSpec {
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormSpec {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            momentum: 0.99,
            epsilon: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub spec: BatchNormSpec,
    /// `[gamma (C) | beta (C)]`.
    pub params: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    shape: Vec<usize>,
    training: bool,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    pub(crate) batch_mean: Vec<T>,
    pub(crate) batch_var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(spec: BatchNormSpec) -> Self {
        let c = spec.channels;
        let mut params = vec![T::one(); c];
        params.extend(std::iter::repeat_n(T::zero(), c));
        Self {
            spec,
            params,
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
        }
    }

    fn check(&self, shape: &[usize]) -> Result<(usize, usize)> {
        if shape.len() < 2 || shape[1] != self.spec.channels {
            return Err(shape_err(
                "batch-norm input",
                format!("[B, {}, ...]", self.spec.channels),
                format!("{shape:?}"),
            ));
        }
        let plane: usize = shape[2..].iter().product();
        Ok((shape[0], plane))
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let (batch, plane) = self.check(x.shape())?;
        let c = self.spec.channels;
        let eps = T::lit(self.spec.epsilon);
        let xd = x.data();
        let (mean, var) = if training {
            let count = T::from_usize(batch * plane).unwrap();
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..batch {
                    let base = (b * c + ch) * plane;
                    for &v in &xd[base..base + plane] {
                        s += v;
                    }
                }
                let m = s / count;
                let mut q = T::zero();
                for b in 0..batch {
                    let base = (b * c + ch) * plane;
                    for &v in &xd[base..base + plane] {
                        q += (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = q / count;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gamma, beta) = self.params.split_at(c);
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                for k in base..base + plane {
                    let h = (xd[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = h;
                    y[k] = gamma[ch] * h + beta[ch];
                }
            }
        }
        Ok((
            Tensor::new(x.shape().to_vec(), y)?,
            BatchNormCache {
                shape: x.shape().to_vec(),
                training,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, dy: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let (batch, plane) = self.check(&cache.shape)?;
        if dy.len() != cache.xhat.len() {
            return Err(shape_err("batch-norm upstream gradient", cache.xhat.len(), dy.len()));
        }
        let c = self.spec.channels;
        let gamma = &self.params[..c];
        let dyd = dy.data();
        let mut grads = vec![T::zero(); 2 * c];
        let mut dx = vec![T::zero(); dy.len()];
        let count = T::from_usize(batch * plane).unwrap();
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                for k in base..base + plane {
                    sum_dy += dyd[k];
                    sum_dy_xhat += dyd[k] * cache.xhat[k];
                }
            }
            grads[ch] = sum_dy_xhat;
            grads[c + ch] = sum_dy;
            let gi = gamma[ch] * cache.inv_std[ch];
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                for k in base..base + plane {
                    dx[k] = if cache.training {
                        gi * (dyd[k] - sum_dy / count - cache.xhat[k] * sum_dy_xhat / count)
                    } else {
                        gi * dyd[k]
                    };
                }
            }
        }
        Ok((grads, Tensor::new(cache.shape.clone(), dx)?))
    }

    /// Folds the batch statistics recorded in a training-mode cache into the
    /// running statistics.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        let mom = T::lit(self.spec.momentum);
        let one_m = T::one() - mom;
        for ch in 0..self.spec.channels {
            self.running_mean[ch] = mom * self.running_mean[ch] + one_m * cache.batch_mean[ch];
            self.running_var[ch] = mom * self.running_var[ch] + one_m * cache.batch_var[ch];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_output_is_standardized() {
        let bn = BatchNorm::<f64>::new(BatchNormSpec::new(2));
        let x = Tensor::from_fn(vec![3, 2, 2, 2], |i| (i as f64).powi(2) * 0.1 - 1.0);
        let (y, cache) = bn.forward(&x, true).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| (0..4).map(move |k| (b * 2 + ch) * 4 + k))
                .map(|k| y.data()[k])
                .collect();
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - cache.batch_var[ch] / (cache.batch_var[ch] + 1e-5)).abs() < 1e-9);
        }
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut bn = BatchNorm::<f64>::new(BatchNormSpec::new(1));
        let x = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, cache) = bn.forward(&x, true).unwrap();
        bn.update_running(&cache);
        assert!((bn.running_mean[0] - 0.01 * 2.5).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.99 + 0.01 * 1.25)).abs() < 1e-15);
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }
}
