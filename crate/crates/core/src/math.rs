//! Small fixed-size linear algebra used by the rasterizer and its backward
//! pass. Matrices are row-major `[[F; 3]; 3]`.

use num_traits::Float;

/// Working precision of the rasterizer: `f32` for rendering and fitting,
/// `f64` for gradient verification.
pub trait Real: Float + Send + Sync + core::fmt::Debug + Default + 'static {}

impl Real for f32 {}
impl Real for f64 {}

pub type Vec3<F> = [F; 3];
pub type Mat3<F> = [[F; 3]; 3];

#[inline(always)]
pub fn lit<F: Float>(x: f64) -> F {
    F::from(x).unwrap()
}

#[inline(always)]
pub fn dot<F: Float>(a: Vec3<F>, b: Vec3<F>) -> F {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline(always)]
pub fn cross<F: Float>(a: Vec3<F>, b: Vec3<F>) -> Vec3<F> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline(always)]
pub fn add<F: Float>(a: Vec3<F>, b: Vec3<F>) -> Vec3<F> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline(always)]
pub fn sub<F: Float>(a: Vec3<F>, b: Vec3<F>) -> Vec3<F> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline(always)]
pub fn scale<F: Float>(a: Vec3<F>, s: F) -> Vec3<F> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline(always)]
pub fn norm<F: Float>(a: Vec3<F>) -> F {
    dot(a, a).sqrt()
}

#[inline(always)]
pub fn axpy<F: Float>(acc: &mut Vec3<F>, s: F, x: Vec3<F>) {
    acc[0] = acc[0] + s * x[0];
    acc[1] = acc[1] + s * x[1];
    acc[2] = acc[2] + s * x[2];
}

#[inline(always)]
pub fn mat_vec<F: Float>(m: &Mat3<F>, v: Vec3<F>) -> Vec3<F> {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// `mᵀ v`
#[inline(always)]
pub fn mat_t_vec<F: Float>(m: &Mat3<F>, v: Vec3<F>) -> Vec3<F> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul<F: Float>(a: &Mat3<F>, b: &Mat3<F>) -> Mat3<F> {
    let mut out = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose<F: Float>(a: &Mat3<F>) -> Mat3<F> {
    let mut out = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn column<F: Float>(m: &Mat3<F>, j: usize) -> Vec3<F> {
    [m[0][j], m[1][j], m[2][j]]
}

pub fn cast_mat<F: Float>(m: &Mat3<f64>) -> Mat3<F> {
    let mut out = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = lit(m[i][j]);
        }
    }
    out
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_rotation<F: Float>(q: [F; 4]) -> Mat3<F> {
    let [w, x, y, z] = q;
    let one = F::one();
    let two = lit::<F>(2.0);
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Pulls a gradient on the rotation matrix back to the (unit) quaternion it
/// was built from.
pub fn quat_to_rotation_vjp<F: Float>(q: [F; 4], d_rot: &Mat3<F>) -> [F; 4] {
    let [w, x, y, z] = q;
    let zero = F::zero();
    let two = lit::<F>(2.0);
    let dw = [[zero, -z, y], [z, zero, -x], [-y, x, zero]];
    let dx = [[zero, y, z], [y, -two * x, -w], [z, w, -two * x]];
    let dy = [[-two * y, x, w], [x, zero, z], [-w, z, -two * y]];
    let dz = [[-two * z, -w, x], [w, -two * z, y], [x, y, zero]];
    let contract = |basis: &Mat3<F>| {
        let mut s = zero;
        for i in 0..3 {
            for j in 0..3 {
                s = s + d_rot[i][j] * basis[i][j];
            }
        }
        two * s
    };
    [contract(&dw), contract(&dx), contract(&dy), contract(&dz)]
}

/// Normalizes a raw quaternion, returning the unit quaternion and the raw
/// norm (zero norm yields the identity rotation).
pub fn normalize_quat<F: Float>(q: [F; 4]) -> ([F; 4], F) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n <= F::zero() {
        return ([F::one(), F::zero(), F::zero(), F::zero()], F::zero());
    }
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// Gradient through `q / |q|` given the unit quaternion and the raw norm.
pub fn normalize_quat_vjp<F: Float>(unit: [F; 4], raw_norm: F, d_unit: [F; 4]) -> [F; 4] {
    if raw_norm <= F::zero() {
        return [F::zero(); 4];
    }
    let proj =
        unit[0] * d_unit[0] + unit[1] * d_unit[1] + unit[2] * d_unit[2] + unit[3] * d_unit[3];
    let mut out = [F::zero(); 4];
    for i in 0..4 {
        out[i] = (d_unit[i] - unit[i] * proj) / raw_norm;
    }
    out
}
