//! Dense tensors and the handful of differentiable operations the model needs,
//! each with a hand-written backward pass.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod params;
pub mod tensor;
pub mod upsample;

pub use activation::{
    log_sigmoid, relu, relu_backward, relu_inplace, sigmoid, sigmoid_backward, sigmoid_map,
    softmax_channels, softmax_channels_backward,
};
pub use conv::{conv1d, conv1d_backward, conv2d, conv2d_backward, Conv2dGrads};
pub use gradcheck::{grad_check, numeric_gradient, GRAD_CHECK_EPS};
pub use loss::{
    focal_loss, pixel_ce_term, pixel_cross_entropy, pixel_cross_entropy_backward, smooth_l1,
    FocalTarget, PixelCe, PROB_EPS,
};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};
