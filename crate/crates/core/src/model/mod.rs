//! Restorers, the coarse-to-fine pipeline and checkpoint files.

pub mod checkpoint;
pub mod config;
pub mod mmht;
pub mod restorer;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{AttentionOrder, ModelConfig, RestorerKind};
pub use mmht::{init_mmht, mmht_forward, mmht_forward_traced, stage_prefix, StageOutputs};
pub use restorer::{init_restorer, mmt_restorer_forward, restorer_forward, unet_restorer_forward, RestorerTrace};
