//! Surface normals from a rendered depth buffer.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::Camera;
use crate::math::{cross, lit, norm, sub, Real, Vec3};

use super::{RenderError, MIN_COVERAGE};

/// Camera-space normals from central differences of back-projected depth.
///
/// A pixel gets a zero normal when it lies on the image border or when it or
/// any of its four neighbors has non-positive depth (no coverage). Normals
/// face the camera: a fronto-parallel plane yields `(0, 0, −1)`.
pub fn normals_from_depth<F: Real>(depth: &[F], cam: &Camera) -> Result<Vec<F>, RenderError> {
    normals_from_depth_with(depth, &[], lit(MIN_COVERAGE), cam)
}

/// Like [`normals_from_depth`], additionally treating pixels whose `alpha` is
/// below `min_alpha` as uncovered. An empty `alpha` slice disables the test.
pub fn normals_from_depth_with<F: Real>(
    depth: &[F],
    alpha: &[F],
    min_alpha: F,
    cam: &Camera,
) -> Result<Vec<F>, RenderError> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    if depth.len() != w * h {
        return Err(RenderError::BufferSize {
            name: "depth",
            expected: w * h,
            found: depth.len(),
        });
    }
    if !alpha.is_empty() && alpha.len() != w * h {
        return Err(RenderError::BufferSize {
            name: "alpha",
            expected: w * h,
            found: alpha.len(),
        });
    }
    let valid = |p: usize| depth[p] > F::zero() && (alpha.is_empty() || alpha[p] >= min_alpha);
    let fx: F = lit(cam.fx);
    let fy: F = lit(cam.fy);
    let cx: F = lit(cam.cx);
    let cy: F = lit(cam.cy);
    let point = |x: usize, y: usize| -> Vec3<F> {
        let z = depth[y * w + x];
        let u = lit::<F>(x as f64 + 0.5);
        let v = lit::<F>(y as f64 + 0.5);
        [(u - cx) / fx * z, (v - cy) / fy * z, z]
    };
    let mut out = vec![F::zero(); 3 * w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = y * w + x;
            if ![p, p - 1, p + 1, p - w, p + w].into_iter().all(valid) {
                continue;
            }
            let dx = sub(point(x + 1, y), point(x - 1, y));
            let dy = sub(point(x, y + 1), point(x, y - 1));
            let n = cross(dy, dx);
            let len = norm(n);
            if !(len > F::zero()) {
                continue;
            }
            for i in 0..3 {
                out[3 * p + i] = n[i] / len;
            }
        }
    }
    Ok(out)
}
