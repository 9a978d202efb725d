mod batchnorm;
mod causal_conv;
mod conv2d;
mod dense;
mod lstm;

pub use batchnorm::{BatchNorm, BatchNormCache, BatchNormSpec};
pub use causal_conv::{CausalConv1d, CausalConv1dCache, CausalConv1dSpec};
pub use conv2d::{Conv2d, Conv2dCache, Conv2dSpec};
pub use dense::{Dense, DenseCache, DenseSpec};
pub use lstm::{Lstm, LstmCache, LstmSpec, GATES};
