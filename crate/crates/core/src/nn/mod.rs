//! Encoders, reverse-mode gradients, SGD and the checkpoint container.

mod array;
pub mod checkpoint;
mod encoder;
mod layers;
mod sgd;

pub use array::DenseArray;
pub use encoder::{
    Conv, Embedding, Encoder, EncoderConfig, EncoderParams, Frozen, HeadCenters, Linear, ParamGroup, PathHandle, Tape, Trunk,
};
pub use sgd::{sgd_update, Sgd};
