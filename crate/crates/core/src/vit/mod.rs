//! Vision transformer backbone: patch tokenization, embedding and encoder.

pub mod block;
pub mod config;
pub mod encoder;
pub mod patch;

pub use config::EncoderConfig;
pub use encoder::{AttentionMaps, Capture, Encoder, EncoderCache, EncoderOutput, TokenSequence, ENCODER_PREFIX};
pub use patch::{patchify, patchify_batch, unpatchify};
