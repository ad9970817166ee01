//! Reverse-mode differentiation, MLP evaluation and Adam optimization.
//!
//! Everything trainable in the pipeline builds on this module: parameters
//! live in a [`ParamStore`], forward passes are recorded on a [`Tape`],
//! gradients flow back through hand-derived vector-Jacobian products, and
//! [`AdamState`] applies updates under the exponential learning-rate decay.
//! [`finite_diff_grad`] is the independent oracle the whole stack is tested
//! against.

mod adam;
mod checkpoint;
mod fd;
pub(crate) mod kernels;
mod mlp;
mod store;
mod tape;
mod tensor;

pub use adam::{lr_schedule, scheduled_lr, AdamParams, AdamState, BASE_LR};
pub use checkpoint::{filter_blocks, load_checkpoint, overlay_blocks, save_checkpoint};
pub use fd::{finite_diff_grad, finite_diff_vec};
pub use mlp::{Activation, LayerSpec, Mlp, MlpArch};
pub use store::{ParamBlock, ParamStore};
pub use tape::{CustomOp, NodeId, Tape};
pub use tensor::Tensor;
