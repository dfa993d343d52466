//! On-disk formats: VOL1 volume files, FFT1 checkpoint tensor archives,
//! the dataset manifest, and the run configuration. Parsers are strict,
//! bounds-checked, and never allocate more than the input can justify;
//! they are the crate's untrusted-input surface and are fuzzed directly.

mod checkpoint;
mod config;
mod manifest;
mod pgm;
mod volume;

pub use checkpoint::{
    archive_to_bytes, load_checkpoint, load_into, parse_archive, save_checkpoint, RawTensor,
};
pub use config::{
    load_run_config, parse_run_config, InferenceConfig, OdeMethod, RunConfig, Stage1Section,
    Stage2Ablation, Stage2Section, TimeWeighting,
};
pub use manifest::{
    load_manifest, parse_manifest, Covariates, Manifest, ScanEntry, SubjectEntry, SurvivalEntry,
};
pub use pgm::write_pgm;
pub use volume::{parse_volume, Volume};
