//! Keyframe-conditioned diffusion policies.
//!
//! The numerical core ([`diffusion`], [`gmm`], [`mlp`], [`inpainting`],
//! [`constrained`]) is generic over the floating point type through
//! [`Scalar`]; the `*64` aliases below fix it to `f64`, which is what the
//! policy runtime, environments and experiments use.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constrained;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod gmm;
pub mod guidance;
pub mod inpainting;
pub mod keyframes;
pub mod mlp;
pub mod runtime;
pub mod scalar;

pub use constrained::{
    constrained_inpaint_step, constraint_value, gamma_prime, solve_projection, ConstraintSchedule,
    GammaInterpretation, GammaSpec, ProjectionInstance, ProjectionMode, ProjectionStatus,
};
pub use diffusion::{
    forward_marginal_sample, reverse_step_sample, sample_chain, ActionSpec, Denoiser, NoiseSchedule,
    Observation, ReverseStepParams, ScheduleConfig, ScheduleKind,
};
pub use error::{Error, Result};
pub use gmm::{GmmDenoiser, GmmModel};
pub use guidance::{sample_guided, ChainTrace, Guidance, Method};
pub use inpainting::{
    broadcast_keyframe, build_horizon_mask, keyframe_mask, sample_known, vanilla_inpaint_step,
    FrameKind, HorizonConfig, Keyframe, KeyframePlacement, Mask,
};
pub use mlp::{MlpDenoiser, MlpParams, TrainConfig};
pub use scalar::Scalar;

pub type NoiseSchedule64 = NoiseSchedule<f64>;
pub type NoiseSchedule32 = NoiseSchedule<f32>;
pub type ReverseStepParams64 = ReverseStepParams<f64>;
pub type Observation64 = Observation<f64>;
pub type GmmModel64 = GmmModel<f64>;
pub type GmmModel32 = GmmModel<f32>;
pub type GmmDenoiser64 = GmmDenoiser<f64>;
pub type MlpParams64 = MlpParams<f64>;
pub type MlpParams32 = MlpParams<f32>;
pub type ProjectionInstance64 = ProjectionInstance<f64>;
