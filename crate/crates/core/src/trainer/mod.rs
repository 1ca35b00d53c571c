//! Fine-tuning with layer-weighted gradients.

pub mod loss;
pub mod optim;
pub mod scale;
mod train;

pub use loss::{claim_loss_from_logits, combined_loss, contrastive_loss_from_logits, ClaimHead, ContrastiveHead};
pub use optim::{AdamW, AdamWConfig};
pub use scale::{bucket_of, layer_factor, scale_gradients, Bucket};
pub use train::{
    concentration_report, train, CaptionItem, CaptionSource, ClaimItem, StepMetrics, TrainConfig, TrainData,
    TrainOutcome, UpdateNormLog,
};
