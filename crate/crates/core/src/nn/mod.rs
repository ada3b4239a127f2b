//! Residual U-Nets for the encoder (fundus → latent angiogram) and decoder
//! (latent → segmentation), their initialization and persistence.

mod checkpoint;
mod network;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, ModelKind, OptimizerSnapshot, RngSnapshot,
    TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use network::{
    Bound, FinalActivation, Network, NetworkConfig, Param, ParamKind, Role,
};
