//! The parallel time-stepping network in normalized coordinates:
//! `R(window, μ)` with a memory branch over the embedded window and a
//! parameter branch, merged by a dense head with `ζ·N_l` linear outputs.

use romforge_nn::layers::{CausalConv1dSpec, DenseSpec, LstmSpec};
use romforge_nn::{
    glorot_init, Activation, Differentiable, Dual, Gradients, LayerCache, LayerSpec, Liftable, Scalar, Sequential,
    Tensor,
};

use super::config::{MemoryEncoder, StepperConfig};
use crate::error::{CoreError, Result};

#[derive(Clone, Debug)]
pub struct StepperNet<T> {
    pub xi: usize,
    pub zeta: usize,
    pub n_latent: usize,
    pub n_params: usize,
    /// Window length after left padding (ccnn only; otherwise `ξ + 1`).
    pub padded_len: usize,
    pub embed: Sequential<T>,
    pub memory: Sequential<T>,
    pub param: Sequential<T>,
    pub head: Sequential<T>,
}

#[derive(Clone, Debug)]
pub struct StepperTape<T> {
    embed: Vec<LayerCache<T>>,
    memory: Vec<LayerCache<T>>,
    param: Vec<LayerCache<T>>,
    head: Vec<LayerCache<T>>,
    memory_width: usize,
}

fn dense(i: usize, o: usize, a: Activation) -> LayerSpec {
    LayerSpec::Dense(DenseSpec {
        in_width: i,
        out_width: o,
        activation: a,
        bias: true,
    })
}

fn stack(input: usize, widths: &[usize], a: Activation) -> (Vec<LayerSpec>, usize) {
    let mut prev = input;
    let mut out = Vec::new();
    for &w in widths {
        out.push(dense(prev, w, a));
        prev = w;
    }
    (out, prev)
}

/// Number of causal-conv stages collapsing the window, `ceil(log2(ξ+1))`.
pub fn ccnn_stages(xi: usize) -> usize {
    (xi + 1).next_power_of_two().trailing_zeros() as usize
}

/// Specs of the `(embed, memory, param, head)` branches.
pub fn stepper_specs(cfg: &StepperConfig) -> Result<[Vec<LayerSpec>; 4]> {
    cfg.validate()?;
    let a = cfg.hidden_activation;
    let e = cfg.embed_width;
    let w = cfg.memory + 1;
    let embed = vec![dense(cfg.n_latent, e, a)];
    let (memory, mw) = match cfg.memory_encoder {
        MemoryEncoder::Ccnn => {
            let mut layers = Vec::new();
            let mut prev = e;
            for _ in 0..ccnn_stages(cfg.memory) {
                layers.push(LayerSpec::CausalConv1d(CausalConv1dSpec {
                    in_channels: prev,
                    out_channels: cfg.ccnn_channels,
                    kernel_length: 2,
                    left_pad: 0,
                    stride: 2,
                    activation: a,
                }));
                prev = cfg.ccnn_channels;
            }
            if layers.is_empty() {
                return Err(CoreError::config("ccnn memory needs a window of at least two states"));
            }
            layers.push(LayerSpec::Reshape { shape: vec![prev] });
            (layers, prev)
        }
        MemoryEncoder::Lstm => {
            let mut layers = Vec::new();
            let mut prev = e;
            for _ in 0..cfg.lstm_depth {
                layers.push(LayerSpec::Lstm(LstmSpec {
                    input_width: prev,
                    hidden_width: cfg.lstm_width,
                }));
                prev = cfg.lstm_width;
            }
            layers.push(LayerSpec::LastStep);
            (layers, prev)
        }
        MemoryEncoder::Ffnn => {
            let mut layers = vec![LayerSpec::Reshape { shape: vec![w * e] }];
            let (d, out) = stack(w * e, &cfg.ffnn_layers, a);
            layers.extend(d);
            (layers, out)
        }
    };
    let (param, pw) = stack(cfg.n_params, &cfg.param_layers, a);
    let (mut head, hw) = stack(mw + pw, &cfg.head_layers, a);
    head.push(dense(hw, cfg.horizon * cfg.n_latent, Activation::Linear));
    Ok([embed, memory, param, head])
}

impl<T: Scalar> StepperNet<T> {
    pub fn new(cfg: &StepperConfig) -> Result<Self> {
        let [e, m, p, h] = stepper_specs(cfg)?;
        let mut net = Self {
            xi: cfg.memory,
            zeta: cfg.horizon,
            n_latent: cfg.n_latent,
            n_params: cfg.n_params,
            padded_len: match cfg.memory_encoder {
                MemoryEncoder::Ccnn => (cfg.memory + 1).next_power_of_two(),
                _ => cfg.memory + 1,
            },
            embed: Sequential::from_specs(e)?,
            memory: Sequential::from_specs(m)?,
            param: Sequential::from_specs(p)?,
            head: Sequential::from_specs(h)?,
        };
        // Independent streams per branch so editing one branch's layout
        // does not reshuffle the others.
        for (k, s) in net.branches_mut().into_iter().enumerate() {
            glorot_init(s, cfg.seed.wrapping_mul(4).wrapping_add(k as u64));
        }
        Ok(net)
    }

    pub fn window_width(&self) -> usize {
        (self.xi + 1) * self.n_latent
    }

    pub fn input_width(&self) -> usize {
        self.window_width() + self.n_params
    }

    pub fn output_width(&self) -> usize {
        self.zeta * self.n_latent
    }

    pub fn branches(&self) -> [&Sequential<T>; 4] {
        [&self.embed, &self.memory, &self.param, &self.head]
    }

    pub fn branches_mut(&mut self) -> [&mut Sequential<T>; 4] {
        [&mut self.embed, &mut self.memory, &mut self.param, &mut self.head]
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for b in self.branches_mut() {
            out.extend(b.param_blocks_mut());
        }
        out
    }

    pub fn param_blocks(&self) -> Vec<&[T]> {
        self.branches().iter().flat_map(|b| b.param_blocks()).collect()
    }

    pub fn sum_sq_params(&self) -> T {
        self.branches().iter().fold(T::zero(), |a, b| a + b.sum_sq_params())
    }

    pub fn num_params(&self) -> usize {
        self.branches().iter().map(|b| b.num_params()).sum()
    }

    /// Sets the final head layer's weights and bias to zero.
    pub fn zero_output_layer(&mut self) {
        if let Some(l) = self.head.layers.last_mut() {
            l.params_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn map_scalar<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> StepperNet<U> {
        StepperNet {
            xi: self.xi,
            zeta: self.zeta,
            n_latent: self.n_latent,
            n_params: self.n_params,
            padded_len: self.padded_len,
            embed: self.embed.map_scalar(f),
            memory: self.memory.map_scalar(f),
            param: self.param.map_scalar(f),
            head: self.head.map_scalar(f),
        }
    }

    fn split_input(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if x.item_len() != self.input_width() {
            return Err(CoreError::mismatch("stepper input width", self.input_width(), x.item_len()));
        }
        let b = x.batch();
        let (ww, nl, p) = (self.window_width(), self.n_latent, self.padded_len);
        let pad = p - (self.xi + 1);
        let d = self.input_width();
        let mut w = Vec::with_capacity(b * p * nl);
        let mut mu = Vec::with_capacity(b * self.n_params);
        for bi in 0..b {
            let row = &x.data()[bi * d..(bi + 1) * d];
            for k in 0..p {
                let s = k.saturating_sub(pad);
                w.extend_from_slice(&row[s * nl..(s + 1) * nl]);
            }
            mu.extend_from_slice(&row[ww..]);
        }
        Ok((Tensor::new(vec![b, p, nl], w)?, Tensor::new(vec![b, self.n_params], mu)?))
    }
}

fn concat_cols<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let n = a.batch();
    let (wa, wb) = (a.item_len(), b.item_len());
    let mut out = Vec::with_capacity(n * (wa + wb));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * wa..(i + 1) * wa]);
        out.extend_from_slice(&b.data()[i * wb..(i + 1) * wb]);
    }
    Ok(Tensor::new(vec![n, wa + wb], out)?)
}

fn split_cols<T: Scalar>(z: &Tensor<T>, wa: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let n = z.batch();
    let w = z.item_len();
    let (mut a, mut b) = (Vec::with_capacity(n * wa), Vec::with_capacity(n * (w - wa)));
    for i in 0..n {
        let row = &z.data()[i * w..(i + 1) * w];
        a.extend_from_slice(&row[..wa]);
        b.extend_from_slice(&row[wa..]);
    }
    Ok((Tensor::new(vec![n, wa], a)?, Tensor::new(vec![n, w - wa], b)?))
}

impl<T: Scalar> Differentiable<T> for StepperNet<T> {
    type Tape = StepperTape<T>;

    fn forward_tape(&self, x: &Tensor<T>) -> romforge_nn::Result<(Tensor<T>, StepperTape<T>)> {
        let (w, mu) = self.split_input(x).map_err(to_nn)?;
        let (e, ce) = self.embed.forward_cached(&w, false)?;
        let (m, cm) = self.memory.forward_cached(&e, false)?;
        let (q, cp) = self.param.forward_cached(&mu, false)?;
        let memory_width = m.item_len();
        let z = concat_cols(&m, &q).map_err(to_nn)?;
        let (r, ch) = self.head.forward_cached(&z, false)?;
        Ok((
            r,
            StepperTape {
                embed: ce,
                memory: cm,
                param: cp,
                head: ch,
                memory_width,
            },
        ))
    }

    fn backward_tape(&self, tape: &StepperTape<T>, dy: &Tensor<T>) -> romforge_nn::Result<(Gradients<T>, Tensor<T>)> {
        let (gh, dz) = self.head.backward(&tape.head, dy)?;
        let (dm, dq) = split_cols(&dz, tape.memory_width).map_err(to_nn)?;
        let (gp, dmu) = self.param.backward(&tape.param, &dq)?;
        let (gm, de) = self.memory.backward(&tape.memory, &dm)?;
        let (ge, dw) = self.embed.backward(&tape.embed, &de)?;
        let b = dy.batch();
        let (nl, p, d) = (self.n_latent, self.padded_len, self.input_width());
        let pad = p - (self.xi + 1);
        let mut dx = vec![T::zero(); b * d];
        for bi in 0..b {
            for k in 0..p {
                let s = k.saturating_sub(pad);
                for j in 0..nl {
                    dx[bi * d + s * nl + j] += dw.data()[(bi * p + k) * nl + j];
                }
            }
            let np = self.n_params;
            dx[bi * d + self.window_width()..(bi + 1) * d].copy_from_slice(&dmu.data()[bi * np..(bi + 1) * np]);
        }
        let mut grads = ge;
        grads.extend(gm);
        grads.extend(gp);
        grads.extend(gh);
        Ok((grads, Tensor::new(vec![b, d], dx)?))
    }
}

impl<T: Scalar> Liftable<T> for StepperNet<T> {
    type Lifted = StepperNet<Dual<T>>;

    fn lift(&self) -> StepperNet<Dual<T>> {
        self.map_scalar(Dual::constant)
    }
}

fn to_nn(e: CoreError) -> romforge_nn::NnError {
    romforge_nn::NnError::Config(e.to_string())
}
