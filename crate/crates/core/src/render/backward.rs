//! Reverse-mode gradients of the rasterizer.

use alloc::vec::Vec;

use crate::camera::Camera;
use crate::exec::{Executor, Serial};
use crate::gaussian::Splat;
use crate::math::Real;

use super::raster::{Frame, Upstream};
use super::{check_camera, RenderConfig, RenderError};

/// Gradient of a scalar loss w.r.t. one splat's parameters, laid out like
/// the parameters themselves.
pub type SplatGradient<F> = Splat<F>;

/// Upstream gradients w.r.t. the rendered buffers of one view. Any buffer
/// left empty is treated as zero.
///
/// `normal` is the gradient w.r.t. the renormalized output normal.
/// `ray_weights` and `ray_depths` are per-sample gradients laid out like the
/// [`super::RayDistortionInput`] captured by the same render.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderGradients<F = f32> {
    pub rgb: Vec<F>,
    pub alpha: Vec<F>,
    pub depth: Vec<F>,
    pub normal: Vec<F>,
    pub ray_offsets: Vec<usize>,
    pub ray_weights: Vec<F>,
    pub ray_depths: Vec<F>,
}

impl<F: Real> RenderGradients<F> {
    fn check(&self, pixels: usize) -> Result<(), RenderError> {
        let sized = [
            ("rgb", &self.rgb, 3 * pixels),
            ("alpha", &self.alpha, pixels),
            ("depth", &self.depth, pixels),
            ("normal", &self.normal, 3 * pixels),
        ];
        for (name, buf, expected) in sized {
            if !buf.is_empty() && buf.len() != expected {
                return Err(RenderError::BufferSize {
                    name,
                    expected,
                    found: buf.len(),
                });
            }
        }
        if !self.ray_weights.is_empty() || !self.ray_depths.is_empty() {
            if self.ray_offsets.len() != pixels + 1 {
                return Err(RenderError::BufferSize {
                    name: "ray offsets",
                    expected: pixels + 1,
                    found: self.ray_offsets.len(),
                });
            }
            let samples = *self.ray_offsets.last().unwrap_or(&0);
            for (name, buf) in [
                ("ray weights", &self.ray_weights),
                ("ray depths", &self.ray_depths),
            ] {
                if !buf.is_empty() && buf.len() != samples {
                    return Err(RenderError::BufferSize {
                        name,
                        expected: samples,
                        found: buf.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn backprop_render<F: Real>(
    splats: &[Splat<F>],
    cam: &Camera,
    cfg: &RenderConfig,
    upstream: &RenderGradients<F>,
) -> Result<Vec<SplatGradient<F>>, RenderError> {
    backprop_render_with(&Serial, splats, cam, cfg, upstream)
}

/// Gradients of every splat parameter given upstream gradients on the
/// buffers rendered from `splats`. Culled splats get zero gradient. The
/// orientation gradient is taken w.r.t. the raw (unnormalized) quaternion.
pub fn backprop_render_with<F: Real, E: Executor>(
    exec: &E,
    splats: &[Splat<F>],
    cam: &Camera,
    cfg: &RenderConfig,
    upstream: &RenderGradients<F>,
) -> Result<Vec<SplatGradient<F>>, RenderError> {
    check_camera(cam)?;
    cfg.validate()?;
    upstream.check(cam.pixel_count())?;
    let frame = Frame::prepare(splats, cam, cfg);
    let up = Upstream {
        rgb: &upstream.rgb,
        alpha: &upstream.alpha,
        depth: &upstream.depth,
        normal: &upstream.normal,
        ray_offsets: &upstream.ray_offsets,
        ray_weights: &upstream.ray_weights,
        ray_depths: &upstream.ray_depths,
    };
    Ok(frame.backward(exec, &up))
}
