//! Memory-aware latent time stepper: network, scaling, teacher-forced
//! training and autoregressive rollout.

pub mod config;
pub mod model;
pub mod net;
pub mod train;

pub use config::{MemoryEncoder, StepperConfig, StepperTrainConfig};
pub use model::{LatentScaling, Rollout, StepperModel};
pub use net::{ccnn_stages, stepper_specs, StepperNet};
pub use train::{
    data_loss, make_windows, one_step_error, split_windows, stepper_loss, train_stepper, StepperLoss,
    StepperTraining, TrainWindow,
};
