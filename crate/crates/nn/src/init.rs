use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{Layer, Sequential};
use crate::Scalar;

fn fill<T: Scalar>(rng: &mut ChaCha8Rng, w: &mut [T], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w {
        *v = T::lit(rng.random_range(-bound..bound));
    }
}

/// Glorot-uniform weights, zero biases, unit batch-norm scale. Deterministic
/// in `seed`.
pub fn glorot_init<T: Scalar>(net: &mut Sequential<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut net.layers {
        match layer {
            Layer::Dense(l) => {
                let (i, o) = (l.spec.in_width, l.spec.out_width);
                fill(&mut rng, l.weights_mut(), i, o);
                l.bias_mut().iter_mut().for_each(|b| *b = T::zero());
            }
            Layer::Conv2d(l) => {
                let k = l.spec.kernel[0] * l.spec.kernel[1];
                let (i, o) = (l.spec.in_channels * k, l.spec.out_channels * k);
                let kl = l.spec.kernel_len();
                let (w, b) = l.params.split_at_mut(kl);
                fill(&mut rng, w, i, o);
                b.iter_mut().for_each(|v| *v = T::zero());
            }
            Layer::CausalConv1d(l) => {
                let k = l.spec.kernel_length;
                let (i, o) = (l.spec.in_channels * k, l.spec.out_channels * k);
                let kl = l.spec.out_channels * l.spec.in_channels * k;
                let (w, b) = l.params.split_at_mut(kl);
                fill(&mut rng, w, i, o);
                b.iter_mut().for_each(|v| *v = T::zero());
            }
            Layer::Lstm(l) => {
                let (f, h) = (l.spec.input_width, l.spec.hidden_width);
                for g in 0..crate::layers::GATES {
                    let (w, b) = l.gate_mut(g);
                    fill(&mut rng, w, f + h, h);
                    b.iter_mut().for_each(|v| *v = T::zero());
                }
            }
            Layer::BatchNorm(l) => {
                let c = l.spec.channels;
                for (j, p) in l.params.iter_mut().enumerate() {
                    *p = if j < c { T::one() } else { T::zero() };
                }
                l.running_mean.iter_mut().for_each(|v| *v = T::zero());
                l.running_var.iter_mut().for_each(|v| *v = T::one());
            }
            Layer::Reshape(_) | Layer::LastStep => {}
        }
    }
}
