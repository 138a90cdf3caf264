//! Prior-guided contrastive pretraining (PGCon) and its within-instance
//! negative variant (WINCon) at desk scale: view construction from a
//! redness prior, small convolutional encoders with hand-written reverse
//! mode, InfoNCE objectives over an EMA memory bank, and the evaluation
//! stack used to judge the learned embeddings.
//!
//! The numerical core is generic over [`Scalar`]; [`Encoder32`] and friends
//! fix the precision used for training, the `*64` aliases the one used for
//! gradient checks.

pub mod config;
pub mod contrastive;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod trainer;
pub mod views;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Encoder32 = nn::Encoder<f32>;
pub type Encoder64 = nn::Encoder<f64>;
pub type EncoderParams32 = nn::EncoderParams<f32>;
pub type EncoderParams64 = nn::EncoderParams<f64>;
pub type MemoryBank32 = contrastive::MemoryBank<f32>;
pub type MemoryBank64 = contrastive::MemoryBank<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type EmbeddingSet32 = eval::LabeledEmbeddingSet<f32>;
pub type EmbeddingSet64 = eval::LabeledEmbeddingSet<f64>;
