//! Differentiable Gaussian-splat rendering and information-driven view
//! selection.
//!
//! The crate renders 3D Gaussian scenes, differentiates pixel colors with
//! respect to the raw Gaussian parameters, accumulates approximate Fisher
//! information, and ranks candidate camera views by how much they reduce the
//! resulting parameter uncertainty.

pub mod dataset;
pub mod error;
pub mod gradients;
pub mod info;
pub mod linalg;
pub mod metrics;
pub mod optimize;
pub mod render;
pub mod scene;
pub mod sh;

pub use error::{Error, Result};
pub use gradients::{l1_gradient, l1_loss, view_jacobian, Channel, JacobianRow, ViewJacobian};
pub use info::{
    accumulate_hessian, score_candidate, select_batch, select_keyframes, select_next_view, uncertainty,
    Approximation, EVariant, HessianApprox, SelectionReport, UncertaintyFunctional, ViewInformation,
};
pub use metrics::{psnr, ssim};
pub use render::render;
pub use scene::{
    flatten_params, unflatten_params, CameraView, Gaussian, Image, ParamGroup, ParamLayout, ParamMask, Scene,
};
