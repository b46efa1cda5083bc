//! Reconstruction of a unitary from two-photon visibilities.

pub mod convert;
pub mod cost;
pub mod dataset;
pub mod model;
pub mod plan;
pub mod reconstruct;
pub mod sst;

pub use convert::{side_excess, visibility_convert, ConvertedRecord};
pub use cost::cost;
pub use dataset::{RecordFlag, VisibilityDataset, VisibilityRecord};
pub use model::{coincidence_ratio, Observable, PowerAnchor, VisibilityFit};
pub use plan::{measurement_plan, MeasurementMode, MeasurementPlan};
pub use reconstruct::{
    initial_guess, reconstruct, reconstruct_ratio, refine, Diagnostics, OptimizerConfig, ReconstructionResult,
};
pub use sst::{sst_initial_guess, SstGuess, CLIP_TOLERANCE};
