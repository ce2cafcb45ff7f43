//! Temporal decoder: flow regression from memory, the smoothness penalty on
//! the flow's spatial gradient, per-pixel grid generation and bilinear
//! sampling.

mod field;
mod huber;
mod sampler;
mod theta;

pub use field::FlowField;
pub use huber::{
    flow_gradient, flow_gradient_adjoint, huber, huber_derivative, mean_abs_flow_gradient, HuberPenalty,
    DEFAULT_DELTA, DEFAULT_WEIGHT,
};
pub use sampler::{
    bilinear_sample, bilinear_sample_backward, grid_generate, grid_generate_backward, warp_error,
    warp_error_interior, SourceGrid, Warp,
};
pub use theta::ThetaRegressor;
