//! Group-masked autoencoder pretraining: reconstruction decoder, masked L1
//! objective and the training loop.

pub mod decoder;
pub mod loss;
pub mod model;
pub mod trainer;

pub use decoder::{DecoderCache, DecoderConfig, ReconDecoder, DECODER_PREFIX};
pub use loss::{masked_l1_grad, masked_l1_loss, LossReduction};
pub use model::PretrainModel;
pub use trainer::{pretrain_step, run_pretraining, run_pretraining_manifest, write_loss_csv, PretrainConfig, RunOptions};
