//! Small differentiable text encoder with hand-written reverse-mode gradients
//! for both parameters and input embeddings.

mod gradcheck;
mod model;
mod params;

pub use gradcheck::{
    central_difference, grad_check, grad_check_against, relative_error, GradCheckConfig,
    GradCheckReport, Objective,
};
pub use model::{
    backward, forward, forward_classify, forward_embed, softmax, valid_mask, zero_delta, Delta,
    DropoutMode, ForwardTrace, GradientSet, Upstream,
};
pub use params::{momentum_update, snapshot, Arch, Dims, ModelConfig, Params, Role, Slot, Tensor};
