//! Deterministic neural-network kernel: tensors, layers with reverse-mode
//! gradients, Glorot initialization, Adam, a Jacobian-norm penalty and a
//! binary model container. Generic over the scalar type.

pub mod activation;
pub mod adam;
pub mod dual;
pub mod error;
pub mod init;
pub mod io;
pub mod jacobian;
pub mod layers;
pub mod network;
pub mod scalar;
pub mod tensor;

pub use activation::{Activation, LEAKY_SLOPE};
pub use adam::{Adam, AdamConfig};
pub use dual::Dual;
pub use error::{NnError, Result};
pub use init::glorot_init;
pub use io::ModelFile;
pub use jacobian::{jacobian_penalty, Differentiable, Liftable, Penalty, PenaltyEstimator};
pub use network::{accumulate, Gradients, Layer, LayerCache, LayerSpec, Sequential};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Network64 = Sequential<f64>;
pub type Network32 = Sequential<f32>;
