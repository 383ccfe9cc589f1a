//! Synthetic datasets, augmentation and image/label storage.

pub mod augment;
pub mod dataset;
pub mod image;
pub mod netpbm;
pub mod synth;

pub use augment::{augment, AugmentOp, AugmentationSpec};
pub use dataset::{
    load_dataset, mix, save_dataset, Dataset, DatasetManifest, Distribution, LabeledSample,
    Provenance, SourceCount,
};
pub use image::Image;
pub use synth::{synth_in_distribution, synth_ood, Glyph, OodKind, SyntheticSpec};
