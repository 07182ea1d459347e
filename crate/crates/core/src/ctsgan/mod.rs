//! Conditional time-series GAN.
//!
//! Four recurrent networks share the same per-step conditions:
//!
//! * embedder: `[x_t, c_t] → h_t` (latent, sigmoid);
//! * recovery: `[h_t, c_t] → x̂_t` (sigmoid, so outputs lie in `[0, 1]`);
//! * generator: `[z_t, c_t, ĥ_{t−1}] → ĥ_t`, run autoregressively at
//!   generation time and teacher-forced on embedded latents in supervision;
//! * discriminator: `[h_t, c_t] → logit`, read at the last step.
//!
//! Training is staged: reconstruction (embedder + recovery), supervised
//! next-latent prediction (generator), then alternating adversarial updates
//! (discriminator, generator). Stages must run in order.

mod checkpoint;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use model::{
    CtsganModel, Hyperparams, LossTraces, NetworkKind, Stage, Stage3Trace, DATA_DIM,
};
