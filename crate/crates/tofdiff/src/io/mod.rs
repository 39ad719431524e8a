//! File formats: PFM float maps, dataset manifests, run configuration,
//! checkpoints, and run records.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod pfm;
pub mod runrecord;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::RunConfig;
pub use manifest::{DatasetManifest, ManifestRecord, MANIFEST_FILENAME};
pub use pfm::{read_pfm, read_pfm_bytes, write_pfm, write_pfm_bytes};
pub use runrecord::RunRecord;
