//! Small numerical engine: dilated 1-D convolution, activations, losses and Adam.
//!
//! Everything is 64-bit and hand-differentiated; each forward has a matching
//! adjoint that is checked against central finite differences in the tests.

mod activation;
mod adam;
mod batch;
mod conv;
mod loss;

pub use activation::{relu_backward, relu_forward, residual_add};
pub use adam::{AdamConfig, AdamState};
pub use batch::SeqBatch;
pub(crate) use conv::{check_conv_args, conv_accumulate, conv_adjoint_accumulate};
pub use conv::{
    dilated_conv1d_backward, dilated_conv1d_forward, dilated_conv1d_forward_taped, ConvKernel,
    ConvTape, PaddingMode,
};
pub use loss::{mse_loss, softmax_nll_loss, FrameLabels, FrameTargets};
