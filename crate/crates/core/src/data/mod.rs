//! Dataset manifests, image decoding, augmentation, batching and synthetic data.

pub mod augment;
pub mod batch;
pub mod image_io;
pub mod manifest;
pub mod synth;

pub use augment::{augment, apply_augment, AugmentParams};
pub use batch::{batch_indices, make_batches, Batch, Dataset};
pub use image_io::{load_image, load_mask, ImageSample};
pub use manifest::{load_manifest, ManifestEntry, SampleManifest, SplitTag, TaskKind};
pub use synth::{synth_dataset, Ellipse, SynthKind, SynthOutput, SynthRecord};
