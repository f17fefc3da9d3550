//! Slice ingestion, preprocessing, splitting, merging and synthetic data.

pub mod imageio;
pub mod manifest;
pub mod phantom;
pub mod preprocess;
pub mod split;

pub use manifest::{load_manifest, DatasetManifest, Domain, Fidelity, SampleRef, SliceSample, Split, MANIFEST_VERSION};
pub use phantom::{
    generate_phantom_dataset, generate_phantom_scenes, render_scene, ModalityCurve, PhantomParams, PhantomScene,
    PhantomSet,
};
pub use preprocess::{
    min_max_normalize, preprocess_mask, preprocess_slice, resize_bilinear, resize_nearest, SLICE_SIZE,
};
pub use split::{merge_with_deepfakes, split_dataset};
