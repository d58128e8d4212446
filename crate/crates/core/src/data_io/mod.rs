//! Storage layer: synthetic datasets, checkpoints and experiment configs.

pub mod checkpoint;
pub mod config;
pub mod mixture;
pub mod table;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_of_kind, save_checkpoint, CheckpointMeta,
    ModelKind,
};
pub use config::{load_config, ExperimentConfig};
pub use mixture::{make_mixture, read_dataset_csv, write_dataset_csv, Dataset, MixtureSpec};
