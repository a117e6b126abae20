//! Multi-view camera rings around an avatar.

use alloc::vec::Vec;

use crate::camera::{Camera, CameraError};
use crate::exec::Executor;
use crate::gaussian::GaussianSet;
use num_traits::Float;

use super::{render_with, RenderConfig, RenderError, RenderOutput};

/// Golden angle in radians, `π (3 − √5)`.
const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Turntable {
    pub n_views: usize,
    /// Camera distance from the set centroid.
    pub radius: f64,
    pub width: u32,
    pub height: u32,
    pub fov_y_degrees: f64,
}

impl Default for Turntable {
    fn default() -> Self {
        Self {
            n_views: 10,
            radius: 3.0,
            width: 256,
            height: 256,
            fov_y_degrees: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TurntableError {
    #[error("at least one view is required")]
    NoViews,
    #[error("radius must be positive and finite, got {0}")]
    Radius(f64),
    #[error("gaussian set is empty or has zero extent")]
    Degenerate,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Cameras on a Fibonacci sphere of radius `tt.radius` around `center`, all
/// looking at `center` with world +y up. View 0 sits on the +z axis; for
/// `n ≥ 2` view `k` has height `z = 1 − 2k/(n − 1)` and azimuth `k` golden
/// angles.
pub fn turntable_cameras(center: [f64; 3], tt: &Turntable) -> Result<Vec<Camera>, TurntableError> {
    if tt.n_views == 0 {
        return Err(TurntableError::NoViews);
    }
    if !(tt.radius > 0.0 && tt.radius.is_finite()) {
        return Err(TurntableError::Radius(tt.radius));
    }
    let n = tt.n_views;
    (0..n)
        .map(|k| {
            let z = if n == 1 {
                1.0
            } else {
                1.0 - 2.0 * k as f64 / (n - 1) as f64
            };
            let r = Float::sqrt((1.0 - z * z).max(0.0));
            let phi = GOLDEN_ANGLE * k as f64;
            let dir = [r * Float::cos(phi), r * Float::sin(phi), z];
            let eye = [
                center[0] + tt.radius * dir[0],
                center[1] + tt.radius * dir[1],
                center[2] + tt.radius * dir[2],
            ];
            Camera::look_at(
                eye,
                center,
                [0.0, 1.0, 0.0],
                tt.width,
                tt.height,
                tt.fov_y_degrees,
            )
            .map_err(TurntableError::from)
        })
        .collect()
}

/// Renders `set` from every turntable camera around its centroid. A set
/// whose splat centers all coincide (including a single splat) is rejected
/// as degenerate.
pub fn render_turntable<E: Executor>(
    exec: &E,
    set: &GaussianSet,
    tt: &Turntable,
    cfg: &RenderConfig,
) -> Result<(Vec<RenderOutput>, Vec<Camera>), TurntableError> {
    let center = set.centroid().ok_or(TurntableError::Degenerate)?;
    if !(set.extent() > 0.0) {
        return Err(TurntableError::Degenerate);
    }
    let cams = turntable_cameras(center, tt)?;
    let outs = cams
        .iter()
        .map(|c| render_with(exec, set, c, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((outs, cams))
}
