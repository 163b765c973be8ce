//! Differentiable triangle rasterization through perturbed optimizers.
//!
//! Rasterization (per-pixel occupancy) and depth aggregation (Z-buffering)
//! are written as argmax problems over a segment and a simplex, then smoothed
//! by averaging them under random perturbations of their linear objective.
//! Values come either from closed forms (when the noise prior admits one) or
//! from Monte-Carlo averages driven by counter-based noise streams; Jacobians
//! come from analytic derivatives or from score-function estimators with a
//! control variate.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. The `parallel` feature evaluates pixels and trials with rayon;
//! reductions always run in a fixed order so results do not depend on the
//! number of worker threads.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

extern crate alloc;

mod error;
pub mod image;
pub mod losses;
pub mod math;
pub mod optim;
pub mod priors;
pub mod renderer;
pub mod scene;
pub mod smooth;

pub use error::{Error, Result};
pub use image::Image;
pub use losses::{CompositeLoss, LossPart, LossWeights};
pub use optim::{
    AdamConfig, AdamState, ControllerConfig, DecayMode, PoseTaskConfig, SmoothingController,
    TaskResult, TrialResult, TruePose,
};
pub use priors::{NoisePrior, NoiseStream, Stage};
pub use renderer::{
    Adjoint, GradReport, HardRender, Mode, RenderOptions, Scene, SoftRender,
};
pub use scene::{Camera, DirectionalLight, Mesh, Pose, ProjectedFace, ProjectedScene};
pub use smooth::{Evaluation, PerturbedEstimate, SmoothingParams};
