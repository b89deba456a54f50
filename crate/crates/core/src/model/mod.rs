//! The patch-transformer architecture: configuration, the pipeline stages
//! and a parameterized model with checkpointing.

pub mod checkpoint;
mod config;
mod network;
pub mod stages;
pub mod verify;

pub use config::{
    chunked_graphs, default_montage, graphs_for_montage, half_second_kernel, pooled_len, table_one_graphs, Ablation,
    LocalGraphSpec, ModelConfig, TokenLayout, TABLE_ONE,
};
pub use network::{param_count, BnBuffers, ForwardTrace, PatchFormerModel};
