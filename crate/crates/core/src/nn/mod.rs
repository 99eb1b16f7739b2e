//! Neural-network building blocks with explicit forward and backward passes.
//!
//! Layers hold [`ParamId`]s into a shared [`ParamStore`]; forward passes read
//! weights immutably and return caches, backward passes accumulate into the
//! store's gradient buffers.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod optim;
pub mod param;

pub use attention::MultiHeadAttention;
pub use conv::{Conv2d, ConvTranspose2x2, MapShape};
pub use linear::Linear;
pub use norm::LayerNorm;
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use param::{Init, Param, ParamId, ParamStore};
