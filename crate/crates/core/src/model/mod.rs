//! Patch autoencoder, segmentation head, AdamW and checkpoints.

mod autoencoder;
mod checkpoint;
mod gradcheck;
mod head;
mod layers;
mod optim;

pub use autoencoder::{EncoderCache, ForwardCache, Gradients, MlpAutoencoder, ModelConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP};
pub use head::SegHead;
pub use layers::{Activation, Linear, LinearGrads};
pub use optim::{cosine_lr, AdamWConfig, AdamWState};
