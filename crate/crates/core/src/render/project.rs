//! Per-splat projection, per-pixel falloff evaluation and the matching
//! derivative code.

use crate::camera::Camera;
use crate::gaussian::Splat;
use crate::math::{
    cast_mat, column, dot, lit, mat_mul, mat_t_vec, mat_vec, normalize_quat, normalize_quat_vjp,
    quat_to_rotation, quat_to_rotation_vjp, Mat3, Real, Vec3,
};

use super::{RenderMode, FALLOFF_CUTOFF_SQ, FALLOFF_FLOOR, LOW_PASS_DILATION};

/// Gaussian falloff of a squared Mahalanobis distance `q`, corrected so that
/// its value and first two derivatives vanish at `c = FALLOFF_CUTOFF_SQ`:
///
/// ```text
/// h(q) = e^(−q/2) − f·(1 − (q − c)/2 + (q − c)²/8),   G(q) = h(q) / h(0)
/// ```
///
/// for `q < c` and `G = 0` beyond, where `f = FALLOFF_FLOOR = e^(−c/2)`.
/// `G(0) = 1` and `G` decreases monotonically to zero.
#[inline]
pub fn falloff<F: Real>(q: F) -> F {
    falloff_with_slope(q).0
}

/// `(G(q), G'(q))`.
#[inline(always)]
pub(super) fn falloff_with_slope<F: Real>(q: F) -> (F, F) {
    let cut = lit::<F>(FALLOFF_CUTOFF_SQ);
    if !(q < cut) {
        return (F::zero(), F::zero());
    }
    let f = lit::<F>(FALLOFF_FLOOR);
    let half = lit::<F>(0.5);
    let quarter = lit::<F>(0.25);
    let eighth = lit::<F>(0.125);
    let c = FALLOFF_CUTOFF_SQ;
    let inv = lit::<F>(1.0 / (1.0 - FALLOFF_FLOOR * (1.0 + 0.5 * c + 0.125 * c * c)));
    let e = (-half * q).exp();
    let d = q - cut;
    let value = e - f * (F::one() - half * d + eighth * d * d);
    let slope = -half * e + f * (half - quarter * d);
    (value * inv, slope * inv)
}

/// Camera in working precision.
#[derive(Clone, Copy, Debug)]
pub(super) struct CameraF<F> {
    pub rotation: Mat3<F>,
    pub translation: Vec3<F>,
    pub fx: F,
    pub fy: F,
    pub cx: F,
    pub cy: F,
    pub width: usize,
    pub height: usize,
}

impl<F: Real> CameraF<F> {
    pub fn new(cam: &Camera) -> Self {
        Self {
            rotation: cast_mat(&cam.rotation),
            translation: cam.translation.map(lit),
            fx: lit(cam.fx),
            fy: lit(cam.fy),
            cx: lit(cam.cx),
            cy: lit(cam.cy),
            width: cam.width as usize,
            height: cam.height as usize,
        }
    }

    /// Viewing ray through pixel center `(px, py)`, scaled to unit z.
    #[inline(always)]
    pub fn ray(&self, px: F, py: F) -> Vec3<F> {
        [(px - self.cx) / self.fx, (py - self.cy) / self.fy, F::one()]
    }

    fn camera_space(&self, p: Vec3<F>) -> Vec3<F> {
        let r = mat_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub(super) enum Footprint<F> {
    /// Screen-space ellipse: `q = dᵀ·conic·d` with `d = pixel − mean` and
    /// `conic = [[a, b], [b, c]]`.
    Ellipse { mean: [F; 2], conic: [F; 3] },
    /// Camera-space disk with tangent axes `e_u`, `e_v` and normal `n`.
    Disk {
        center: Vec3<F>,
        e_u: Vec3<F>,
        e_v: Vec3<F>,
        normal: Vec3<F>,
        inv_su: F,
        inv_sv: F,
        near: F,
    },
}

#[derive(Clone, Copy, Debug)]
pub(super) struct Projected<F> {
    pub index: usize,
    /// Camera-space center depth, the sort key.
    pub depth: F,
    pub opacity: F,
    pub color: [F; 3],
    /// Unit normal facing the camera (zero in volumetric mode).
    pub normal: Vec3<F>,
    /// `±1`: sign applied to the disk normal to make it face the camera.
    pub facing: F,
    pub footprint: Footprint<F>,
    /// Pixel range `[x0, x1) × [y0, y1)` that may receive nonzero falloff.
    pub bbox: [usize; 4],
}

/// Gradient accumulator of one splat's projected quantities.
#[derive(Clone, Copy, Debug)]
pub(super) struct SplatAccum<F> {
    /// Volumetric: `d mean (2), d conic (a, b, c), d depth`.
    /// Surfel: `d center (3), d e_u (3), d e_v (3), d normal (3), d inv_su,
    /// d inv_sv`.
    pub geo: [F; 14],
    pub color: [F; 3],
    pub opacity: F,
}

impl<F: Real> SplatAccum<F> {
    pub fn zero() -> Self {
        Self {
            geo: [F::zero(); 14],
            color: [F::zero(); 3],
            opacity: F::zero(),
        }
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.geo.iter_mut().zip(other.geo.iter()) {
            *a = *a + *b;
        }
        for (a, b) in self.color.iter_mut().zip(other.color.iter()) {
            *a = *a + *b;
        }
        self.opacity = self.opacity + other.opacity;
    }
}

struct Geometry<F> {
    /// Camera-space center.
    t: Vec3<F>,
    unit_q: [F; 4],
    q_norm: F,
    /// Splat axes in camera space, `R_cam · R(q)`.
    axes: Mat3<F>,
}

fn geometry<F: Real>(s: &Splat<F>, cam: &CameraF<F>) -> Geometry<F> {
    let (unit_q, q_norm) = normalize_quat(s.rotation);
    let axes = mat_mul(&cam.rotation, &quat_to_rotation(unit_q));
    Geometry {
        t: cam.camera_space(s.position),
        unit_q,
        q_norm,
        axes,
    }
}

fn finite3<F: Real>(v: &[F]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn clamp_range<F: Real>(lo: F, hi: F, n: usize) -> Option<(usize, usize)> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Some((0, n));
    }
    let lo = lo.floor().max(F::zero());
    let hi = hi.ceil().min(lit(n as f64));
    if hi <= lo {
        return None;
    }
    Some((lo.to_usize().unwrap_or(0), hi.to_usize().unwrap_or(n)))
}

/// Projects one splat, or returns `None` when it is culled or cannot reach
/// any pixel.
pub(super) fn project<F: Real>(
    index: usize,
    s: &Splat<F>,
    cam: &CameraF<F>,
    mode: RenderMode,
    near: F,
) -> Option<Projected<F>> {
    let g = geometry(s, cam);
    let t = g.t;
    if !(t[2] > near) || !finite3(&t) || !finite3(&s.scale) {
        return None;
    }
    let cut = lit::<F>(FALLOFF_CUTOFF_SQ);
    let (footprint, normal, facing, bbox) = match mode {
        RenderMode::Volumetric => {
            let tz = t[2];
            let j0 = [cam.fx / tz, F::zero(), -cam.fx * t[0] / (tz * tz)];
            let j1 = [F::zero(), cam.fy / tz, -cam.fy * t[1] / (tz * tz)];
            let m = scaled_axes(&g.axes, s.scale);
            let t0 = mat_t_vec(&m, j0);
            let t1 = mat_t_vec(&m, j1);
            let dil = lit::<F>(LOW_PASS_DILATION);
            let a = dot(t0, t0) + dil;
            let b = dot(t0, t1);
            let c = dot(t1, t1) + dil;
            let det = a * c - b * b;
            if !(det > F::zero()) {
                return None;
            }
            let mean = [cam.fx * t[0] / tz + cam.cx, cam.fy * t[1] / tz + cam.cy];
            let rx = (cut * a).sqrt() + F::one();
            let ry = (cut * c).sqrt() + F::one();
            let (x0, x1) = clamp_range(mean[0] - rx, mean[0] + rx, cam.width)?;
            let (y0, y1) = clamp_range(mean[1] - ry, mean[1] + ry, cam.height)?;
            let fp = Footprint::Ellipse {
                mean,
                conic: [c / det, -b / det, a / det],
            };
            (fp, [F::zero(); 3], F::one(), [x0, y0, x1, y1])
        }
        RenderMode::Surfel => {
            let e_u = column(&g.axes, 0);
            let e_v = column(&g.axes, 1);
            let n = column(&g.axes, 2);
            let (su, sv) = (s.scale[0], s.scale[1]);
            if !(su > F::zero() && sv > F::zero()) {
                return None;
            }
            let facing = if dot(n, t) > F::zero() {
                -F::one()
            } else {
                F::one()
            };
            let bbox = disk_bbox(&t, &e_u, &e_v, su, sv, cam, near)?;
            let fp = Footprint::Disk {
                center: t,
                e_u,
                e_v,
                normal: n,
                inv_su: F::one() / su,
                inv_sv: F::one() / sv,
                near,
            };
            (
                fp,
                [n[0] * facing, n[1] * facing, n[2] * facing],
                facing,
                bbox,
            )
        }
    };
    Some(Projected {
        index,
        depth: t[2],
        opacity: s.opacity,
        color: s.color,
        normal,
        facing,
        footprint,
        bbox,
    })
}

fn scaled_axes<F: Real>(axes: &Mat3<F>, s: Vec3<F>) -> Mat3<F> {
    let mut m = *axes;
    for row in m.iter_mut() {
        for (v, sj) in row.iter_mut().zip(s) {
            *v = *v * sj;
        }
    }
    m
}

/// Screen bounds of the camera-space box enclosing the disk's support.
fn disk_bbox<F: Real>(
    t: &Vec3<F>,
    e_u: &Vec3<F>,
    e_v: &Vec3<F>,
    su: F,
    sv: F,
    cam: &CameraF<F>,
    near: F,
) -> Option<[usize; 4]> {
    let r = lit::<F>(FALLOFF_CUTOFF_SQ).sqrt();
    let half: [F; 3] = core::array::from_fn(|i| {
        let a = su * e_u[i];
        let b = sv * e_v[i];
        r * (a * a + b * b).sqrt()
    });
    let full = [0, 0, cam.width, cam.height];
    let mut lo = [F::infinity(); 2];
    let mut hi = [F::neg_infinity(); 2];
    for corner in 0..8 {
        let p: [F; 3] = core::array::from_fn(|i| {
            if corner >> i & 1 == 1 {
                t[i] + half[i]
            } else {
                t[i] - half[i]
            }
        });
        if !(p[2] > near) {
            return Some(full);
        }
        let x = cam.fx * p[0] / p[2] + cam.cx;
        let y = cam.fy * p[1] / p[2] + cam.cy;
        lo = [lo[0].min(x), lo[1].min(y)];
        hi = [hi[0].max(x), hi[1].max(y)];
    }
    let (x0, x1) = clamp_range(lo[0], hi[0], cam.width)?;
    let (y0, y1) = clamp_range(lo[1], hi[1], cam.height)?;
    Some([x0, y0, x1, y1])
}

/// Falloff sample of one splat at one pixel.
#[derive(Clone, Copy, Debug)]
pub(super) struct Sample<F> {
    pub g: F,
    /// Depth reported for this splat along this pixel's ray.
    pub depth: F,
}

impl<F: Real> Projected<F> {
    #[inline(always)]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.bbox[0] && x < self.bbox[2] && y >= self.bbox[1] && y < self.bbox[3]
    }

    /// Evaluates the falloff at pixel center `(px, py)` whose viewing ray is
    /// `ray`. Returns `None` where the falloff is zero.
    #[inline(always)]
    pub fn eval(&self, px: F, py: F, ray: &Vec3<F>) -> Option<Sample<F>> {
        match self.footprint {
            Footprint::Ellipse { mean, conic } => {
                let dx = px - mean[0];
                let dy = py - mean[1];
                let q =
                    conic[0] * dx * dx + lit::<F>(2.0) * conic[1] * dx * dy + conic[2] * dy * dy;
                let (g, _) = falloff_with_slope(q);
                (g > F::zero()).then_some(Sample {
                    g,
                    depth: self.depth,
                })
            }
            Footprint::Disk { .. } => {
                let d = self.disk_hit(ray)?;
                let (g, _) = falloff_with_slope(d.u * d.u + d.v * d.v);
                (g > F::zero()).then_some(Sample { g, depth: d.lambda })
            }
        }
    }

    #[inline(always)]
    fn disk_hit(&self, ray: &Vec3<F>) -> Option<DiskHit<F>> {
        let Footprint::Disk {
            center,
            e_u,
            e_v,
            normal,
            inv_su,
            inv_sv,
            near,
        } = self.footprint
        else {
            return None;
        };
        let nr = dot(normal, *ray);
        if !(nr.abs() > lit::<F>(1e-12)) {
            return None;
        }
        let lambda = dot(normal, center) / nr;
        if !(lambda > near) {
            return None;
        }
        let x = [
            lambda * ray[0] - center[0],
            lambda * ray[1] - center[1],
            lambda * ray[2] - center[2],
        ];
        Some(DiskHit {
            nr,
            lambda,
            x,
            u: dot(x, e_u) * inv_su,
            v: dot(x, e_v) * inv_sv,
        })
    }

    /// Accumulates the gradient of one pixel sample into `acc`.
    ///
    /// `d_alpha` is the loss gradient w.r.t. this sample's `α = o·G`,
    /// `d_depth` w.r.t. its reported depth and `d_normal` w.r.t. its
    /// camera-facing normal.
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate(
        &self,
        px: F,
        py: F,
        ray: &Vec3<F>,
        d_alpha: F,
        d_depth: F,
        d_normal: Vec3<F>,
        acc: &mut SplatAccum<F>,
    ) {
        let two = lit::<F>(2.0);
        match self.footprint {
            Footprint::Ellipse { mean, conic } => {
                let dx = px - mean[0];
                let dy = py - mean[1];
                let q = conic[0] * dx * dx + two * conic[1] * dx * dy + conic[2] * dy * dy;
                let (g, slope) = falloff_with_slope(q);
                acc.opacity = acc.opacity + d_alpha * g;
                let dq = d_alpha * self.opacity * slope;
                let gx = acc.geo[0] - dq * two * (conic[0] * dx + conic[1] * dy);
                let gy = acc.geo[1] - dq * two * (conic[1] * dx + conic[2] * dy);
                acc.geo[0] = gx;
                acc.geo[1] = gy;
                acc.geo[2] = acc.geo[2] + dq * dx * dx;
                acc.geo[3] = acc.geo[3] + dq * two * dx * dy;
                acc.geo[4] = acc.geo[4] + dq * dy * dy;
                acc.geo[5] = acc.geo[5] + d_depth;
            }
            Footprint::Disk {
                center,
                e_u,
                e_v,
                normal,
                inv_su,
                inv_sv,
                ..
            } => {
                let Some(h) = self.disk_hit(ray) else {
                    return;
                };
                let (g, slope) = falloff_with_slope(h.u * h.u + h.v * h.v);
                acc.opacity = acc.opacity + d_alpha * g;
                let dq = d_alpha * self.opacity * slope;
                let du = two * h.u * dq;
                let dv = two * h.v * dq;
                let mut d_x = [F::zero(); 3];
                for i in 0..3 {
                    d_x[i] = du * inv_su * e_u[i] + dv * inv_sv * e_v[i];
                    acc.geo[3 + i] = acc.geo[3 + i] + du * inv_su * h.x[i];
                    acc.geo[6 + i] = acc.geo[6 + i] + dv * inv_sv * h.x[i];
                }
                acc.geo[12] = acc.geo[12] + du * dot(h.x, e_u);
                acc.geo[13] = acc.geo[13] + dv * dot(h.x, e_v);
                let d_lambda = dot(d_x, *ray) + d_depth;
                let d_nd = d_lambda / h.nr;
                let d_nr = -d_lambda * h.lambda / h.nr;
                for i in 0..3 {
                    acc.geo[i] = acc.geo[i] - d_x[i] + d_nd * normal[i];
                    acc.geo[9 + i] = acc.geo[9 + i]
                        + d_nd * center[i]
                        + d_nr * ray[i]
                        + self.facing * d_normal[i];
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct DiskHit<F> {
    nr: F,
    lambda: F,
    x: Vec3<F>,
    u: F,
    v: F,
}

/// Pulls the accumulated projected-space gradient of one splat back to its
/// parameters.
pub(super) fn splat_backward<F: Real>(
    s: &Splat<F>,
    cam: &CameraF<F>,
    mode: RenderMode,
    acc: &SplatAccum<F>,
) -> Splat<F> {
    let g = geometry(s, cam);
    let t = g.t;
    let mut d_t = [F::zero(); 3];
    let mut d_axes = [[F::zero(); 3]; 3];
    let mut d_scale = [F::zero(); 3];
    match mode {
        RenderMode::Volumetric => {
            let tz = t[2];
            let (fx, fy) = (cam.fx, cam.fy);
            let j0 = [fx / tz, F::zero(), -fx * t[0] / (tz * tz)];
            let j1 = [F::zero(), fy / tz, -fy * t[1] / (tz * tz)];
            let m = scaled_axes(&g.axes, s.scale);
            let t0 = mat_t_vec(&m, j0);
            let t1 = mat_t_vec(&m, j1);
            let dil = lit::<F>(LOW_PASS_DILATION);
            let a = dot(t0, t0) + dil;
            let b = dot(t0, t1);
            let c = dot(t1, t1) + dil;
            let det = a * c - b * b;
            let conic = [[c / det, -b / det], [-b / det, a / det]];
            let half = lit::<F>(0.5);
            let g_conic = [
                [acc.geo[2], half * acc.geo[3]],
                [half * acc.geo[3], acc.geo[4]],
            ];
            // dΣ = −C·G·C
            let cg = mul2(&conic, &g_conic);
            let cgc = mul2(&cg, &conic);
            let d_sigma = [[-cgc[0][0], -cgc[0][1]], [-cgc[1][0], -cgc[1][1]]];
            // Σ = T·Tᵀ with T = J·M, so dT = 2·dΣ·T.
            let two = lit::<F>(2.0);
            let rows = [t0, t1];
            let mut d_tm = [[F::zero(); 3]; 2];
            for r in 0..2 {
                for k in 0..3 {
                    d_tm[r][k] = two * (d_sigma[r][0] * rows[0][k] + d_sigma[r][1] * rows[1][k]);
                }
            }
            // dJ = dT·Mᵀ and dM = Jᵀ·dT.
            let dj0 = mat_vec(&m, d_tm[0]);
            let dj1 = mat_vec(&m, d_tm[1]);
            let mut d_m = [[F::zero(); 3]; 3];
            for i in 0..3 {
                for k in 0..3 {
                    d_m[i][k] = j0[i] * d_tm[0][k] + j1[i] * d_tm[1][k];
                }
            }
            for i in 0..3 {
                for k in 0..3 {
                    d_axes[i][k] = d_m[i][k] * s.scale[k];
                    d_scale[k] = d_scale[k] + d_m[i][k] * g.axes[i][k];
                }
            }
            let tz2 = tz * tz;
            let tz3 = tz2 * tz;
            let (dmx, dmy) = (acc.geo[0], acc.geo[1]);
            d_t[0] = dmx * fx / tz - dj0[2] * fx / tz2;
            d_t[1] = dmy * fy / tz - dj1[2] * fy / tz2;
            d_t[2] = -dmx * fx * t[0] / tz2 - dmy * fy * t[1] / tz2 - dj0[0] * fx / tz2
                + dj0[2] * two * fx * t[0] / tz3
                - dj1[1] * fy / tz2
                + dj1[2] * two * fy * t[1] / tz3
                + acc.geo[5];
        }
        RenderMode::Surfel => {
            for i in 0..3 {
                d_t[i] = acc.geo[i];
                d_axes[i][0] = acc.geo[3 + i];
                d_axes[i][1] = acc.geo[6 + i];
                d_axes[i][2] = acc.geo[9 + i];
            }
            let inv_su = F::one() / s.scale[0];
            let inv_sv = F::one() / s.scale[1];
            d_scale[0] = -acc.geo[12] * inv_su * inv_su;
            d_scale[1] = -acc.geo[13] * inv_sv * inv_sv;
        }
    }
    // axes = R_cam · R(q)  ⇒  dR(q) = R_camᵀ · d axes
    let d_rq = mat_mul(&transpose3(&cam.rotation), &d_axes);
    let d_unit = quat_to_rotation_vjp(g.unit_q, &d_rq);
    Splat {
        position: mat_t_vec(&cam.rotation, d_t),
        scale: d_scale,
        rotation: normalize_quat_vjp(g.unit_q, g.q_norm, d_unit),
        color: acc.color,
        opacity: acc.opacity,
    }
}

fn transpose3<F: Real>(m: &Mat3<F>) -> Mat3<F> {
    crate::math::transpose(m)
}

fn mul2<F: Real>(a: &[[F; 2]; 2], b: &[[F; 2]; 2]) -> [[F; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn falloff_is_one_at_center_and_zero_at_cutoff() {
        assert_eq!(falloff(0.0f64), 1.0);
        assert_eq!(falloff(FALLOFF_CUTOFF_SQ), 0.0);
        assert!(falloff(FALLOFF_CUTOFF_SQ - 1e-6).abs() < 1e-12);
        assert!(falloff_with_slope(FALLOFF_CUTOFF_SQ - 1e-9).1.abs() < 1e-9);
        assert!(falloff(1.0f64) > falloff(2.0f64));
    }

    #[test]
    fn falloff_slope_matches_finite_difference() {
        for q in [0.0f64, 0.5, 3.0, 9.0] {
            let h = 1e-6;
            let numeric = (falloff(q + h) - falloff((q - h).max(0.0))) / (q + h - (q - h).max(0.0));
            let (_, slope) = falloff_with_slope(q);
            assert!((numeric - slope).abs() < 1e-6, "q = {q}");
        }
    }
}
