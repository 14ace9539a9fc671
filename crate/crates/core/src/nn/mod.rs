//! Minimal differentiable kernels with hand-written backward passes.
//!
//! Forward functions write into caller-provided buffers; backward functions
//! *accumulate* parameter gradients and overwrite input gradients.

mod adam;
mod gradcheck;
mod ops;
mod param;

pub use adam::Adam;
pub use gradcheck::{finite_diff_check, relative_error};
pub use ops::{
    affine_backward, affine_forward, avgpool_backward, avgpool_forward, avgpool_len,
    conv1d_backward, conv1d_forward, layernorm_backward, layernorm_forward, mae, mae_grad,
    masked_softmax, masked_softmax_backward, relu_backward, relu_forward, LayerNormCache,
    LAYERNORM_EPS,
};
pub use param::{glorot_limit, ParamTensor};
