//! Dataset manifests, sample loading, patch sampling and synthetic vessel
//! phantoms.

mod manifest;
mod patches;
mod phantom;
mod sample;

pub use manifest::{
    expectation, load_manifest, parse_manifest, write_manifest, DatasetExpectation,
    DatasetManifest, DomainTag, ManifestWarning, SampleRecord, DECLARED_DATASETS,
};
pub use patches::{sample_patches, Patch};
pub use phantom::{generate_phantom, generate_phantoms, write_phantom_set, Phantom, PhantomParams};
pub use sample::{load_sample, load_samples, Sample};
