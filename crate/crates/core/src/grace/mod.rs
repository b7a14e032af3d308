//! Codebook editing at a single layer: keys from the down-projection input,
//! learned replacement values, and optional contrastively trained key
//! encoders.

mod codebook;
mod encoder;
mod pairs;
mod value;

use std::path::Path;

pub use codebook::{
    deferral_lookup, edited_generate, grace_edit, matched_value, target_digest, Codebook, CodebookEntry, EditReport,
    GraceOptions,
};
pub use encoder::{
    contrastive_loss, encode_key, train_encoder, ContrastiveBatch, EncoderGrads, EncoderTraining, EncoderWeights,
    KeyPair, TrainedEncoder, DEFAULT_OUTPUT_DIM, NL2PL_MARGIN, PL2NL_MARGIN,
};
pub use pairs::{encoder_pairs, fit_encoder};
pub use value::{optimize_value, ValueOptions, ValueOutcome};

use crate::benchdata::Task;
use crate::error::Result;

/// Contrastive margin for a task's input modality.
pub fn margin_for(task: Task) -> f64 {
    match task {
        Task::Nl2Pl => NL2PL_MARGIN,
        Task::Pl2Nl => PL2NL_MARGIN,
    }
}

impl EncoderWeights {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::checkpoint::save(path, "encoder", self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::checkpoint::load(path, "encoder")
    }
}
