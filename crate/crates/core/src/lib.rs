//! Core of the smoj avatar runtime.
//!
//! Everything in here is pure computation over in-memory data: the Gaussian
//! splat and avatar asset model, the SMOJ byte codec, blendshape animation,
//! the tile-based splat rasterizer with its analytic backward pass, the
//! image losses, the multi-view fitting optimizer and the expression /
//! cross-attention kernels. File IO, parallel execution, the CLI and the
//! network services live in the `smoj` crate.
#![no_std]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod animation;
pub mod asset;
pub mod camera;
pub mod codec;
pub mod exec;
pub mod expression;
pub mod fit;
pub mod gaussian;
pub mod loss;
pub mod math;
pub mod render;

pub use animation::{blend, blend_timeline, emotion_preset, BlendTimeline};
pub use asset::{
    component_deltas, validate_asset, validate_weights, AvatarAsset, BlendWeights, Violation,
    FACS_CHANNELS,
};
pub use camera::Camera;
pub use exec::{Executor, Serial};
pub use gaussian::{Gaussian, GaussianSet, Splat};
pub use render::{render, render_reference, render_with, RenderConfig, RenderMode, RenderOutput};
