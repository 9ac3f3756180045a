//! Dense `f64` tensors with reverse-mode differentiation, Adam, and the
//! `SSCK` checkpoint format.

mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use graph::{attention, causal_mask, pooled_attention, Graph, NodeId, Var, DICE_EPS, MASK_NEG};
pub use kernels::order_invariant_sum;
pub use optim::{cosine_lr, Adam};
pub use params::{
    load_checkpoint, read_checkpoint_bytes, Init, ParamId, ParamStore, CHECKPOINT_MAGIC,
};
pub use tensor::Tensor;
