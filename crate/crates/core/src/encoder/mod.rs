//! Desk-scale dual encoder with adapters, hidden-state recording and patching.

mod checkpoint;
mod grad;
pub mod layers;
mod model;
mod params;
mod tokenizer;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT};
pub use grad::{HeadOutput, LossHead};
pub use model::{
    similarity_with_temperature, DualEncoder, HiddenStateTrace, ImagePass, Intervention, ModelConfig,
    SimilarityScore, TextPass, UNIT_NORM_TOL,
};
pub use params::{GradMode, GradientMap, ParamGroup, ParamSpec, Params};
pub use tokenizer::{words, TokenSequence, Vocab, BOS, BOS_ID, EOS, EOS_ID};

#[cfg(test)]
mod tests;
