//! Dense tensors, the differentiable primitives the networks are built from,
//! and the Adam update.

mod adam;
mod conv;
pub mod gradcheck;
mod ops;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use conv::{
    bias_grad, conv2d, conv2d_gemm, conv2d_grad, conv2d_grad_gemm, conv_output_size, ConvGrads,
    Padding,
};
pub(crate) use conv::{conv2d_gemm_accumulate, conv2d_grad_gemm_parts};
pub use gradcheck::{gradcheck, Differentiable, GradCheckOptions, GradCheckReport};
pub use ops::{
    dense, dense_grad, upsample_nearest, upsample_nearest_grad, DenseGrads, Elementwise,
};
pub use tensor::Tensor;
