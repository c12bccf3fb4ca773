//! File formats, the fixture cache, CSV reports and the `cora` command line
//! around [`cora_core`].

pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod pipeline;
pub mod report;

pub use cache::FixtureCache;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CheckpointKind};
pub use config::RunConfigFile;
