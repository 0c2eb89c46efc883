//! Minimal differentiable building blocks: a reverse-mode tape over 2-D
//! matrices, the layers the network is made of, named parameter groups, the
//! freeze-aware optimizer step, gradient checking and the checkpoint format.

pub mod checkpoint;
pub mod layers;
mod optim;
mod params;
pub mod probe;
mod real;
mod tape;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use optim::{apply_update, Adam, AdamConfig};
pub use params::{FreezeSet, Grads, GroupName, Param, ParamId, ParamStore};
pub use probe::{backward, forward, grad_check, ForwardCache, Layer, LayerSpec};
pub use real::Real;
pub use tape::{Backprop, Graph, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("unknown parameter group `{0}`")]
    UnknownGroup(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameter groups are not a partition: {0}")]
    Partition(String),
    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
