//! Gaussian splat primitives.

use alloc::vec::Vec;
use num_traits::Float;

use crate::math::lit;

/// Tolerance on `|‖q‖ − 1|` under which a stored quaternion counts as unit.
pub const UNIT_QUATERNION_TOLERANCE: f64 = 1e-6;

/// One splat as stored in an asset: position, per-axis scale, orientation
/// as a scalar-first `(w, x, y, z)` unit quaternion, RGB color and opacity.
///
/// In 2DGS rendering the third scale component is the disk thickness and is
/// ignored by the rasterizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    pub scale: [f32; 3],
    pub orientation: [f32; 4],
    pub color: [f32; 3],
    pub opacity: f32,
}

impl Default for Gaussian {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            scale: [0.01; 3],
            orientation: [1.0, 0.0, 0.0, 0.0],
            color: [0.5; 3],
            opacity: 1.0,
        }
    }
}

impl Gaussian {
    /// Builds a splat, normalizing the orientation.
    pub fn new(
        position: [f32; 3],
        scale: [f32; 3],
        orientation: [f32; 4],
        color: [f32; 3],
        opacity: f32,
    ) -> Self {
        Self {
            position,
            scale,
            orientation: normalize_quaternion(orientation),
            color,
            opacity,
        }
    }

    pub fn orientation_norm(&self) -> f64 {
        quaternion_norm(self.orientation)
    }

    /// Bitwise field equality (distinguishes `-0.0` from `0.0`).
    pub fn bit_eq(&self, other: &Gaussian) -> bool {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Fields flattened as position, scale, orientation, color, opacity.
    pub fn to_array(&self) -> [f32; 14] {
        let mut out = [0.0; 14];
        out[0..3].copy_from_slice(&self.position);
        out[3..6].copy_from_slice(&self.scale);
        out[6..10].copy_from_slice(&self.orientation);
        out[10..13].copy_from_slice(&self.color);
        out[13] = self.opacity;
        out
    }

    pub fn from_array(a: &[f32; 14]) -> Self {
        Self {
            position: [a[0], a[1], a[2]],
            scale: [a[3], a[4], a[5]],
            orientation: [a[6], a[7], a[8], a[9]],
            color: [a[10], a[11], a[12]],
            opacity: a[13],
        }
    }
}

pub fn quaternion_norm(q: [f32; 4]) -> f64 {
    q.iter()
        .map(|&c| (c as f64) * (c as f64))
        .sum::<f64>()
        .sqrt()
}

/// Normalizes to unit length in double precision. A quaternion that is
/// already unit within f32 precision is returned unchanged, which makes the
/// operation idempotent bit-for-bit. Zero or non-finite input maps to the
/// identity rotation.
pub fn normalize_quaternion(q: [f32; 4]) -> [f32; 4] {
    normalize_quaternion_f64([q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64])
        .unwrap_or([1.0, 0.0, 0.0, 0.0])
}

/// Like [`normalize_quaternion`] but reports a degenerate input as `None`.
pub fn normalize_quaternion_f64(q: [f64; 4]) -> Option<[f32; 4]> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n.is_finite() && n > 1e-12) {
        return None;
    }
    let stored = [q[0] as f32, q[1] as f32, q[2] as f32, q[3] as f32];
    if (quaternion_norm(stored) - 1.0).abs() <= UNIT_QUATERNION_TOLERANCE {
        return Some(stored);
    }
    Some([
        (q[0] / n) as f32,
        (q[1] / n) as f32,
        (q[2] / n) as f32,
        (q[3] / n) as f32,
    ])
}

/// An ordered collection of splats (`M = gaussians.len()`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianSet {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn bit_eq(&self, other: &GaussianSet) -> bool {
        self.len() == other.len()
            && self
                .gaussians
                .iter()
                .zip(&other.gaussians)
                .all(|(a, b)| a.bit_eq(b))
    }

    pub fn centroid(&self) -> Option<[f64; 3]> {
        if self.is_empty() {
            return None;
        }
        let mut c = [0.0f64; 3];
        for g in &self.gaussians {
            for k in 0..3 {
                c[k] += g.position[k] as f64;
            }
        }
        let n = self.len() as f64;
        Some([c[0] / n, c[1] / n, c[2] / n])
    }

    /// Largest distance of a splat center from the centroid.
    pub fn extent(&self) -> f64 {
        let Some(c) = self.centroid() else {
            return 0.0;
        };
        self.gaussians
            .iter()
            .map(|g| {
                let d: f64 = (0..3)
                    .map(|k| {
                        let x = g.position[k] as f64 - c[k];
                        x * x
                    })
                    .sum();
                d.sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Converts to the rasterizer's parameter representation.
    pub fn to_splats<F: Float>(&self) -> Vec<Splat<F>> {
        self.gaussians.iter().map(Splat::from_gaussian).collect()
    }

    pub fn from_splats<F: Float>(splats: &[Splat<F>]) -> Self {
        Self {
            gaussians: splats.iter().map(Splat::to_gaussian).collect(),
        }
    }
}

/// Differentiable splat parameters in working precision `F`.
///
/// Unlike [`Gaussian`] the orientation need not be unit: the rasterizer
/// normalizes it, so gradients flow through the normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat<F> {
    pub position: [F; 3],
    pub scale: [F; 3],
    pub rotation: [F; 4],
    pub color: [F; 3],
    pub opacity: F,
}

impl<F: Float> Splat<F> {
    pub const PARAMS: usize = 14;

    pub fn zero() -> Self {
        Self {
            position: [F::zero(); 3],
            scale: [F::zero(); 3],
            rotation: [F::zero(); 4],
            color: [F::zero(); 3],
            opacity: F::zero(),
        }
    }

    pub fn from_gaussian(g: &Gaussian) -> Self {
        let c = |x: f32| lit::<F>(x as f64);
        Self {
            position: g.position.map(c),
            scale: g.scale.map(c),
            rotation: g.orientation.map(c),
            color: g.color.map(c),
            opacity: c(g.opacity),
        }
    }

    pub fn to_gaussian(&self) -> Gaussian {
        let c = |x: F| x.to_f32().unwrap_or(f32::NAN);
        Gaussian {
            position: self.position.map(c),
            scale: self.scale.map(c),
            orientation: self.rotation.map(c),
            color: self.color.map(c),
            opacity: c(self.opacity),
        }
    }

    /// Parameter `i` in the flattened order position, scale, rotation, color,
    /// opacity.
    pub fn param(&self, i: usize) -> F {
        match i {
            0..=2 => self.position[i],
            3..=5 => self.scale[i - 3],
            6..=9 => self.rotation[i - 6],
            10..=12 => self.color[i - 10],
            13 => self.opacity,
            _ => panic!("splat parameter index {i} out of range"),
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut F {
        match i {
            0..=2 => &mut self.position[i],
            3..=5 => &mut self.scale[i - 3],
            6..=9 => &mut self.rotation[i - 6],
            10..=12 => &mut self.color[i - 10],
            13 => &mut self.opacity,
            _ => panic!("splat parameter index {i} out of range"),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for i in 0..Self::PARAMS {
            *self.param_mut(i) = self.param(i) + other.param(i);
        }
    }
}
