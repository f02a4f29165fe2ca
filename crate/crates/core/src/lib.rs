//! Superresolution of image sequences through local polynomial models.
//!
//! Frames are registered to the first one, their pixels are projected onto
//! a finer grid, and a small quadratic is fitted around every grid site. The
//! coefficient patches are compressed with PCA and mapped to HR intensities
//! by a one-hidden-layer network.

pub mod error;
pub mod image;
pub mod linalg;
pub mod localmodel;
pub mod neural;
pub mod pca;
pub mod pgm;
pub mod pipeline;
pub mod projection;
pub mod registration;
pub mod synth;

pub use error::{Error, Result};
pub use image::{rms_error, GrayImage};
pub use localmodel::{FitConfig, Interpolator, ModelField, PolyModel};
pub use neural::{MlpParams, NormContext, TrainConfig, TrainOutcome, TrainingSample};
pub use pca::{CoeffPatch, EigenBasis};
pub use pgm::{load_pgm, save_pgm};
pub use pipeline::{ModelBundle, PipelineConfig, ShiftSource};
pub use projection::{ProjectedCloud, ProjectedPixel};
pub use registration::{RegistrationConfig, Transform};
pub use synth::{SequenceSpec, SyntheticSequence};
