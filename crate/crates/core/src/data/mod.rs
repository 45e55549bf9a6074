//! Slice ingestion, synthetic data, patch sampling, augmentation and splits.

pub mod dataset;
pub mod patches;
pub mod pgm;
pub mod slice;
pub mod split;
pub mod synth;

pub use dataset::{
    load_dataset, synthesize, write_dataset, Dataset, Manifest, SlicePair, Subject, SynthConfig,
};
pub use patches::{augment, sample_patches, AugmentSpec, PatchBatch, PatchOrigin, Transform};
pub use slice::{
    load_raw_slice, write_raw_slice, CtSlice, Dose, HuWindow, RawEncoding, SliceSource,
};
pub use split::{make_split, DatasetSplit};
pub use synth::{synth_ldct, synth_phantom, LdctNoiseModel};
