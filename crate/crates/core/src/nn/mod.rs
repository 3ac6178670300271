//! Small fixed-layer network core: tensors, convolution, recurrent cell,
//! activations, reconstruction loss, Adam, and a finite-difference checker.

mod activation;
mod adam;
mod conv;
mod gradcheck;
mod loss;
mod params;
mod recurrent;
mod tensor;

pub use activation::{relu, relu_backward};
pub use adam::{adam_step, AdamState};
pub(crate) use conv::conv1d_backward_accumulate;
pub use conv::{conv1d_backward, conv1d_forward, ConvGrads};
pub use gradcheck::{grad_check, grad_check_shifts, relative_error, GradCheckReport, TensorCheck};
pub use loss::{l2_distance, l2_loss};
pub use params::{Param, ParamStore};
pub use recurrent::{recurrent_cell_backward, recurrent_cell_forward, CellGrads, CellWeights};
pub use tensor::Tensor2D;
