use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::{Scalar, Tensor};

/// Single LSTM layer over `[B, T, input_width]`, emitting the hidden state at
/// every step as `[B, T, hidden_width]`. Gates act on the concatenation
/// `[x_n, h_{n-1}]`; the initial hidden and cell states are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub input_width: usize,
    pub hidden_width: usize,
}

/// Gate blocks in parameter order: input, forget, output, candidate cell.
pub const GATES: usize = 4;

#[derive(Clone, Debug)]
pub struct Lstm<T> {
    pub spec: LstmSpec,
    /// `[W_i | b_i | W_f | b_f | W_o | b_o | W_c | b_c]`, each `W` is
    /// `hidden × (input + hidden)` row-major.
    pub params: Vec<T>,
}

#[derive(Clone, Debug)]
struct StepCache<T> {
    z: Vec<T>,
    i: Vec<T>,
    f: Vec<T>,
    o: Vec<T>,
    g: Vec<T>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    shape: Vec<usize>,
    steps: Vec<StepCache<T>>,
}

impl<T: Scalar> Lstm<T> {
    pub fn new(spec: LstmSpec) -> Self {
        let n = GATES * spec.hidden_width * (spec.input_width + spec.hidden_width + 1);
        Self {
            spec,
            params: vec![T::zero(); n],
        }
    }

    fn zw(&self) -> usize {
        self.spec.input_width + self.spec.hidden_width
    }

    fn block(&self) -> usize {
        self.spec.hidden_width * (self.zw() + 1)
    }

    /// `(W, b)` of gate `k` (0 = input, 1 = forget, 2 = output, 3 = cell).
    pub fn gate(&self, k: usize) -> (&[T], &[T]) {
        let h = self.spec.hidden_width;
        let wlen = h * self.zw();
        let base = k * self.block();
        (&self.params[base..base + wlen], &self.params[base + wlen..base + wlen + h])
    }

    pub fn gate_mut(&mut self, k: usize) -> (&mut [T], &mut [T]) {
        let h = self.spec.hidden_width;
        let wlen = h * self.zw();
        let (base, blk) = (k * self.block(), self.block());
        let (w, rest) = self.params[base..base + blk].split_at_mut(wlen);
        (w, &mut rest[..h])
    }

    fn affine(&self, k: usize, z: &[T]) -> Vec<T> {
        let (w, b) = self.gate(k);
        let zw = self.zw();
        (0..self.spec.hidden_width)
            .map(|r| {
                let row = &w[r * zw..(r + 1) * zw];
                row.iter().zip(z).fold(b[r], |acc, (&a, &x)| acc + a * x)
            })
            .collect()
    }

    fn step_cached(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> (Vec<T>, StepCache<T>) {
        let mut z = Vec::with_capacity(self.zw());
        z.extend_from_slice(x);
        z.extend_from_slice(h_prev);
        let i: Vec<T> = self.affine(0, &z).into_iter().map(Scalar::sigmoid).collect();
        let f: Vec<T> = self.affine(1, &z).into_iter().map(Scalar::sigmoid).collect();
        let o: Vec<T> = self.affine(2, &z).into_iter().map(Scalar::sigmoid).collect();
        let g: Vec<T> = self.affine(3, &z).into_iter().map(Scalar::tanh).collect();
        let hw = self.spec.hidden_width;
        let mut c = vec![T::zero(); hw];
        let mut tanh_c = vec![T::zero(); hw];
        let mut h = vec![T::zero(); hw];
        for k in 0..hw {
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
            tanh_c[k] = c[k].tanh();
            h[k] = o[k] * tanh_c[k];
        }
        let cache = StepCache {
            z,
            i,
            f,
            o,
            g,
            c_prev: c_prev.to_vec(),
            tanh_c,
        };
        (h, cache)
    }

    /// One recurrence step: returns `(h_next, c_next)`.
    pub fn step(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let hw = self.spec.hidden_width;
        if x.len() != self.spec.input_width || h_prev.len() != hw || c_prev.len() != hw {
            return Err(shape_err(
                "lstm step",
                format!("x:{} h:{hw} c:{hw}", self.spec.input_width),
                format!("x:{} h:{} c:{}", x.len(), h_prev.len(), c_prev.len()),
            ));
        }
        let (h, cache) = self.step_cached(x, h_prev, c_prev);
        let c = (0..hw)
            .map(|k| cache.f[k] * cache.c_prev[k] + cache.i[k] * cache.g[k])
            .collect();
        Ok((h, c))
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[2] != self.spec.input_width {
            return Err(shape_err(
                "lstm input",
                format!("[B, T, {}]", self.spec.input_width),
                format!("{input:?}"),
            ));
        }
        Ok(vec![input[0], input[1], self.spec.hidden_width])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LstmCache<T>)> {
        let out_shape = self.output_shape(x.shape())?;
        let (batch, steps, fw) = (x.shape()[0], x.shape()[1], self.spec.input_width);
        let hw = self.spec.hidden_width;
        let xd = x.data();
        let mut out = vec![T::zero(); batch * steps * hw];
        let mut caches = Vec::with_capacity(batch * steps);
        for b in 0..batch {
            let mut h = vec![T::zero(); hw];
            let mut c = vec![T::zero(); hw];
            for t in 0..steps {
                let xt = &xd[(b * steps + t) * fw..(b * steps + t + 1) * fw];
                let (hn, sc) = self.step_cached(xt, &h, &c);
                c = (0..hw).map(|k| sc.f[k] * sc.c_prev[k] + sc.i[k] * sc.g[k]).collect();
                out[(b * steps + t) * hw..(b * steps + t + 1) * hw].copy_from_slice(&hn);
                h = hn;
                caches.push(sc);
            }
        }
        Ok((
            Tensor::new(out_shape, out)?,
            LstmCache {
                shape: x.shape().to_vec(),
                steps: caches,
            },
        ))
    }

    pub fn backward(&self, cache: &LstmCache<T>, dy: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let (batch, steps, fw) = (cache.shape[0], cache.shape[1], self.spec.input_width);
        let hw = self.spec.hidden_width;
        if dy.len() != batch * steps * hw {
            return Err(shape_err("lstm upstream gradient", batch * steps * hw, dy.len()));
        }
        let zw = self.zw();
        let wlen = hw * zw;
        let block = self.block();
        let dyd = dy.data();
        let mut grads = vec![T::zero(); self.params.len()];
        let mut dx = vec![T::zero(); batch * steps * fw];
        for b in 0..batch {
            let mut dh_next = vec![T::zero(); hw];
            let mut dc_next = vec![T::zero(); hw];
            for t in (0..steps).rev() {
                let sc = &cache.steps[b * steps + t];
                let mut da = vec![vec![T::zero(); hw]; GATES];
                for k in 0..hw {
                    let dh = dyd[(b * steps + t) * hw + k] + dh_next[k];
                    let do_ = dh * sc.tanh_c[k];
                    let dc = dh * sc.o[k] * (T::one() - sc.tanh_c[k] * sc.tanh_c[k]) + dc_next[k];
                    let di = dc * sc.g[k];
                    let dg = dc * sc.i[k];
                    let df = dc * sc.c_prev[k];
                    dc_next[k] = dc * sc.f[k];
                    da[0][k] = di * sc.i[k] * (T::one() - sc.i[k]);
                    da[1][k] = df * sc.f[k] * (T::one() - sc.f[k]);
                    da[2][k] = do_ * sc.o[k] * (T::one() - sc.o[k]);
                    da[3][k] = dg * (T::one() - sc.g[k] * sc.g[k]);
                }
                let mut dz = vec![T::zero(); zw];
                for (gate, dag) in da.iter().enumerate() {
                    let base = gate * block;
                    let w = &self.params[base..base + wlen];
                    for r in 0..hw {
                        let d = dag[r];
                        grads[base + wlen + r] += d;
                        let gw = &mut grads[base + r * zw..base + (r + 1) * zw];
                        let wr = &w[r * zw..(r + 1) * zw];
                        for j in 0..zw {
                            gw[j] += d * sc.z[j];
                            dz[j] += d * wr[j];
                        }
                    }
                }
                dx[(b * steps + t) * fw..(b * steps + t + 1) * fw].copy_from_slice(&dz[..fw]);
                dh_next.copy_from_slice(&dz[fw..]);
            }
        }
        Ok((grads, Tensor::new(cache.shape.clone(), dx)?))
    }
}
