//! Tile-based splat rasterization.
//!
//! Splats are projected once per frame, sorted globally by camera-space
//! center depth (ties by splat index) and binned into square tiles. Each
//! pixel composites its tile's splats front to back:
//!
//! ```text
//! αₖ = oₖ·Gₖ(pixel)        wₖ = αₖ·Πⱼ<ₖ(1 − αⱼ)
//! rgb = Σ wₖcₖ + (1 − Σ wₖ)·background      alpha = Σ wₖ
//! depth = Σ wₖdₖ / alpha                      normal = normalize(Σ wₖnₖ)
//! ```
//!
//! `G` is the screen-space EWA Gaussian in [`RenderMode::Volumetric`] mode
//! and the ray/disk intersection Gaussian in [`RenderMode::Surfel`] mode.
//! Both use a compact-support Gaussian (see [`falloff`]), so the reference
//! path and the tiled path agree without any culling tolerance.

mod backward;
mod normals;
mod project;
mod raster;
mod turntable;

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{Camera, CameraError};
use crate::exec::{Executor, Serial};
use crate::gaussian::{GaussianSet, Splat};
use crate::math::Real;

pub use backward::{backprop_render, backprop_render_with, RenderGradients, SplatGradient};
pub use normals::{normals_from_depth, normals_from_depth_with};
pub use project::falloff;
pub use turntable::{render_turntable, turntable_cameras, Turntable, TurntableError};

/// Falloff value below which the kernel is cut to zero.
pub const FALLOFF_FLOOR: f64 = 1.0 / 255.0;
/// Squared Mahalanobis distance at which the kernel reaches zero,
/// `2 ln(1 / FALLOFF_FLOOR)` (≈ 3.33σ).
pub const FALLOFF_CUTOFF_SQ: f64 = 11.082_527_090_316_852;
/// Low-pass dilation added to the projected 2D covariance diagonal (px²).
pub const LOW_PASS_DILATION: f64 = 0.3;
/// Pixels with less coverage report zero depth and normal.
pub const MIN_COVERAGE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RenderMode {
    /// Volumetric 3D Gaussians projected with EWA splatting (3DGS).
    #[default]
    Volumetric,
    /// Flat oriented disks intersected per ray (2DGS); produces normals.
    Surfel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub mode: RenderMode,
    pub tile_size: u32,
    /// Stop compositing a pixel once its transmittance falls below this
    /// value. `None` composites every splat.
    pub termination: Option<f32>,
    pub background: [f32; 3],
    /// Splats whose center is not farther than this are culled.
    pub near: f32,
    /// Largest splat count accepted by [`render_reference`].
    pub reference_cap: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            mode: RenderMode::Volumetric,
            tile_size: 16,
            termination: Some(1e-6),
            background: [0.0; 3],
            near: 0.01,
            reference_cap: 64,
        }
    }
}

impl RenderConfig {
    pub fn surfel() -> Self {
        Self {
            mode: RenderMode::Surfel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.tile_size == 0 {
            return Err(RenderError::Config("tile size must be at least 1"));
        }
        if let Some(t) = self.termination {
            if !(t > 0.0 && t < 1.0) {
                return Err(RenderError::Config(
                    "termination threshold must lie in (0, 1)",
                ));
            }
        }
        if !(self.near > 0.0 && self.near.is_finite()) {
            return Err(RenderError::Config("near plane must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    Camera(#[from] CameraError),
    #[error("invalid render config: {0}")]
    Config(&'static str),
    #[error("reference renderer accepts at most {cap} splats, got {count}")]
    CapExceeded { count: usize, cap: usize },
    #[error("buffer {name} has {found} values, expected {expected}")]
    BufferSize {
        name: &'static str,
        expected: usize,
        found: usize,
    },
}

fn check_camera(cam: &Camera) -> Result<(), RenderError> {
    cam.validate().map_err(RenderError::from)
}

/// Rendered buffers, row-major with `width` pixels per row.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<F = f32> {
    pub width: usize,
    pub height: usize,
    /// `H·W·3`, composited over the background.
    pub rgb: Vec<F>,
    /// `H·W`, coverage `Σ wₖ` excluding the background.
    pub alpha: Vec<F>,
    /// `H·W`, camera-space depth; 0 where coverage is below [`MIN_COVERAGE`].
    pub depth: Vec<F>,
    /// `H·W·3`, unit camera-space normals facing the camera, or zero.
    /// Always zero in volumetric mode.
    pub normal: Vec<F>,
}

impl<F: Real> RenderOutput<F> {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            rgb: vec![F::zero(); 3 * n],
            alpha: vec![F::zero(); n],
            depth: vec![F::zero(); n],
            normal: vec![F::zero(); 3 * n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Largest absolute difference over all four buffers.
    pub fn max_abs_diff(&self, other: &Self) -> F {
        let pairs = [
            (&self.rgb, &other.rgb),
            (&self.alpha, &other.alpha),
            (&self.depth, &other.depth),
            (&self.normal, &other.normal),
        ];
        let mut m = F::zero();
        for (a, b) in pairs {
            assert_eq!(a.len(), b.len(), "buffer size mismatch");
            for (x, y) in a.iter().zip(b.iter()) {
                m = m.max((*x - *y).abs());
            }
        }
        m
    }

    pub fn bit_eq(&self, other: &Self) -> bool
    where
        F: PartialEq,
    {
        fn same<F: Real>(a: &[F], b: &[F]) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x == y && x.is_sign_negative() == y.is_sign_negative())
        }
        self.width == other.width
            && self.height == other.height
            && same(&self.rgb, &other.rgb)
            && same(&self.alpha, &other.alpha)
            && same(&self.depth, &other.depth)
            && same(&self.normal, &other.normal)
    }
}

/// Per-pixel `(weight, depth)` samples captured while compositing, stored
/// row-major: samples of pixel `p` are `offsets[p]..offsets[p + 1]`, front
/// to back.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayDistortionInput<F = f32> {
    pub offsets: Vec<usize>,
    pub weights: Vec<F>,
    pub depths: Vec<F>,
}

impl<F: Real> RayDistortionInput<F> {
    pub fn from_rays(rays: &[Vec<(F, F)>]) -> Self {
        let mut out = Self {
            offsets: vec![0],
            ..Self::default()
        };
        for ray in rays {
            for &(w, d) in ray {
                out.weights.push(w);
                out.depths.push(d);
            }
            out.offsets.push(out.weights.len());
        }
        out
    }

    pub fn ray_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn ray(&self, i: usize) -> (&[F], &[F]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.weights[r.clone()], &self.depths[r])
    }
}

/// Renders serially in f32.
pub fn render(
    set: &GaussianSet,
    cam: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderOutput, RenderError> {
    render_with(&Serial, set, cam, cfg)
}

/// Renders with tiles distributed by `exec`. Output does not depend on the
/// executor.
pub fn render_with<E: Executor>(
    exec: &E,
    set: &GaussianSet,
    cam: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderOutput, RenderError> {
    let splats = set.to_splats::<f32>();
    Ok(render_splats(exec, &splats, cam, cfg, false)?.0)
}

/// Renders parameter splats in precision `F`, optionally capturing the
/// per-ray samples needed by the distortion loss.
pub fn render_splats<F: Real, E: Executor>(
    exec: &E,
    splats: &[Splat<F>],
    cam: &Camera,
    cfg: &RenderConfig,
    capture_rays: bool,
) -> Result<(RenderOutput<F>, Option<RayDistortionInput<F>>), RenderError> {
    check_camera(cam)?;
    cfg.validate()?;
    let frame = raster::Frame::prepare(splats, cam, cfg);
    Ok(frame.render(exec, capture_rays))
}

/// Brute-force oracle: every pixel composites every projected splat in
/// global depth order, with no tiling, bounding boxes or early termination.
pub fn render_reference(
    set: &GaussianSet,
    cam: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderOutput, RenderError> {
    render_reference_splats(&set.to_splats::<f32>(), cam, cfg)
}

pub fn render_reference_splats<F: Real>(
    splats: &[Splat<F>],
    cam: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderOutput<F>, RenderError> {
    check_camera(cam)?;
    cfg.validate()?;
    if splats.len() > cfg.reference_cap {
        return Err(RenderError::CapExceeded {
            count: splats.len(),
            cap: cfg.reference_cap,
        });
    }
    let frame = raster::Frame::prepare(splats, cam, cfg);
    Ok(frame.render_reference())
}
