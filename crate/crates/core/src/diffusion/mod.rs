//! Deterministic DDIM stepping with optional semantic conditioning, and the
//! diffusion autoencoder (semantic encoder + conditioned noise predictor).

mod model;
mod nets;
mod schedule;
mod step;

pub use model::{
    content_hash, generate_with, to_image_space, to_model_space, train_diffae, DiffAECheckpoint,
    DiffAEModel, DiffAETrainConfig, TrainedDiffAE, DIFFAE_FORMAT,
};
pub(crate) use model::{dtype_name, parse_dtype};
pub use nets::{init_store, ConvDenoiser, NetConfig, SemanticEncoder};
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use step::{
    ddim_decode, ddim_encode, ddim_forward_step, ddim_jump, ddim_reverse_step, ddim_transition,
    predict_x0, stride_path, Denoiser, LatentState, SemanticCode,
};
