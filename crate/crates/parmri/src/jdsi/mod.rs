//! Unrolled joint sensitivity estimation and image reconstruction network:
//! an initialization module producing maps and a combined image from the
//! zero-filled acquisition, then K phases of map refinement, a learned
//! thresholding image update, and k-space data consistency.

pub mod config;
pub mod model;
pub mod train;

pub use config::{JdsiConfig, MapsMode};
pub use model::{
    pack_batch, reconstruct, JdsiBatch, JdsiForward, JdsiModel, JdsiRecon, JdsiRefs, PhaseOutput,
};
pub use train::{evaluate, load_checkpoint, train, EpochRecord, TrainHistory, TrainSample};
