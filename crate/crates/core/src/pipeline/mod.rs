//! End-to-end superresolution: training-set construction, model bundles,
//! reconstruction and benchmarks.

mod bench;
mod config;
mod dataset;
mod model;
mod patches;

pub use bench::{
    baseline_zoom, benchmark_interpolators, benchmark_methods, dimension_sweep, interpolator_set, sweep_csv, RmsTable,
    SweepPoint, METHODS,
};
pub use config::{PipelineConfig, ShiftSource};
pub use dataset::{
    build_training_set, harvest, load_samples, read_samples, sample_sites, samples_from_image, save_samples,
    sequence_cloud, sequence_seed, sequence_transforms, simulate, to_training_samples, validation_records, write_samples, SampleRecord,
    SourceInfo, TrainingSet, HELD_OUT_STREAM,
};
pub use model::{
    read_manifest, superresolve, superresolve_with_shifts, train_bundle, write_manifest, train_from_records, ModelBundle, Provenance, SuperResolved,
    BASIS_FILE, MANIFEST_FILE, MLP_FILE,
};
pub use patches::{build_patch, PatchExtractor, SitePatch, PATCH_ORDER};
