//! Tiny LLaMA-style decoder: architecture, canonical parameter addressing,
//! forward NLL with exact gradients, and checkpoint persistence.

mod address;
mod checkpoint;
mod config;
mod forward;
mod gradcheck;
mod store;

pub use address::{head_of_dimension, Axis, Kind, LayerRef, Layout, ParamAddress, Slot};
pub use checkpoint::{
    checkpoint_container, entry_shape_for, load_checkpoint, read_container, save_checkpoint, store_from_container, save_checkpoint_with_metadata, write_container, Container,
    ContainerHeader, ManifestEntry, CHECKPOINT_MAGIC, FORMAT_VERSION,
};
pub use config::ModelConfig;
pub use forward::{batch_loss, forward, forward_nll, loss_and_grad, ForwardPass, Gradients};
pub use gradcheck::{grad_check, GradCheck};
pub use store::ParamStore;
