//! A small deterministic neural-network engine: dense and GRU layers,
//! losses, Adam, Gaussian noise and finite-difference gradient checks.
//! Everything is `f64` and single-threaded per model.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod noise;
pub mod params;
mod tensor;

pub use gradcheck::{gradient_check, numeric_gradient, GradCheckReport};
pub use layers::{
    dense_backward, dense_forward, gru_step, gru_step_backward, sigmoid, Activation, Dense, Gru,
    GruParams, RecurrentNet, SeqCache,
};
pub use loss::{bce_with_logits, bce_with_logits_scalar, moment_loss, mse};
pub use noise::{sample_gaussian, NoiseSpec};
pub use params::{adam_step, clip_global_norm, flatten_grads, global_norm, AdamConfig, Gradients, ParameterStore};
pub use tensor::Tensor;
