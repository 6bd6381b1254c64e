//! Surrogate-driven respiratory motion models.
//!
//! The crate covers the whole modelling chain: displacement-field algebra on
//! regular grids, variational registration, spirometry surrogate signals,
//! per-voxel linear regression of motion on `(v, v', 1)`, population mean
//! atlases with transfer to new static volumes, a synthetic phantom with exact
//! ground truth, and DICE-based leave-one-out evaluation.

pub mod atlas;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod grid;
pub mod phantom;
pub mod pipeline;
pub mod registration;
pub mod regression;
pub mod rvf;
pub mod surrogate;

pub use error::{Error, ErrorKind, Result};
pub use field::{compose_fields, invert_field, resample_field, resample_volume, warp_image};
pub use grid::{DisplacementField, GridMeta, MaskVolume, ScalarVolume, Vec3};
pub use dataset::Dataset4D;
pub use surrogate::SurrogateSignal;
pub use regression::{MotionModel, RegressorMatrix};
pub use atlas::{MeanAtlas, PatientMotionSet};
pub use pipeline::PipelineConfig;
