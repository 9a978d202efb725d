use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Negative-side slope of the leaky ReLU used for hidden layers.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Linear => z,
            Activation::LeakyRelu => {
                if z > T::zero() {
                    z
                } else {
                    T::lit(LEAKY_SLOPE) * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => z.sigmoid(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T, y: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::LeakyRelu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::lit(LEAKY_SLOPE)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }

    pub fn apply_all<T: Scalar>(self, z: &[T]) -> Vec<T> {
        match self {
            Activation::Linear => z.to_vec(),
            _ => z.iter().map(|&v| self.apply(v)).collect(),
        }
    }

    /// `dz = dy ⊙ σ'(z)` in place over `dy`.
    pub fn backprop<T: Scalar>(self, z: &[T], y: &[T], dy: &mut [T]) {
        if self == Activation::Linear {
            return;
        }
        for ((d, &zi), &yi) in dy.iter_mut().zip(z).zip(y) {
            *d *= self.derivative(zi, yi);
        }
    }
}
