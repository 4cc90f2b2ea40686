//! Sequential flow matching over sequences of views.
//!
//! Every task is expressed as an ordered sequence of latent *views* (image
//! latents or Plücker ray-map latents), each carrying its own time value.
//! A single transformer velocity field is trained over all views jointly, and
//! any subset of views can then be clamped as conditions while the rest are
//! integrated from noise.
//!
//! Module map:
//!
//! * [`flowpath`]: linear interpolation path, velocity targets, timestep
//!   sampling, time shift and the joint loss.
//! * [`autograd`]: a small tape-based reverse-mode engine over 2-D tensors.
//! * [`seqformer`]: the joint denoiser with per-view time modulation and 3D RoPE.
//! * [`viewcodec`]: patch codec, camera poses, Plücker ray maps, prompts.
//! * [`sampler`]: conditional Euler sampling, guidance, multiview and pose estimation.
//! * [`synthgen`]: procedural scenes, analytic renderer and on-disk datasets.
//! * [`harness`]: training, checkpoints, metrics, evaluation and the CLI.

pub mod autograd;
pub mod error;
pub mod flowpath;
pub mod harness;
pub mod real;
pub mod sampler;
pub mod seqformer;
pub mod synthgen;
pub mod viewcodec;

pub use error::{Error, Result};
pub use real::Real;
