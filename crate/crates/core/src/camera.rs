//! Pinhole cameras.
//!
//! Camera space is x right, y down, z forward (into the scene). Pixel
//! `(i, j)` is sampled at its center `(i + 0.5, j + 0.5)`.

use crate::math::{cross, dot, mat_t_vec, mat_vec, norm, scale, sub, Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("rotation is not orthonormal (error {0:e})")]
    Rotation(f64),
    #[error("image size {width}x{height} is empty")]
    EmptyImage { width: u32, height: u32 },
    #[error("non-finite camera parameter")]
    NonFinite,
    #[error("eye and target coincide")]
    Degenerate,
}

/// World-to-camera rigid transform plus intrinsics: `p_cam = R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    /// Camera at `eye` looking at `target`. `up` is the world direction that
    /// should appear upward in the image.
    pub fn look_at(
        eye: Vec3<f64>,
        target: Vec3<f64>,
        up: Vec3<f64>,
        width: u32,
        height: u32,
        fov_y_degrees: f64,
    ) -> Result<Self, CameraError> {
        let fwd = sub(target, eye);
        let fwd_len = norm(fwd);
        if !(fwd_len > 1e-12) {
            return Err(CameraError::Degenerate);
        }
        let z = scale(fwd, 1.0 / fwd_len);
        // Image y points down, so world "up" maps to −y.
        let mut x = cross(z, up);
        if norm(x) < 1e-9 {
            // Looking along `up`: pick any perpendicular axis.
            let alt = if z[0].abs() < 0.9 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            };
            x = cross(z, alt);
        }
        let x = scale(x, 1.0 / norm(x));
        let y = cross(z, x);
        let rotation = [x, y, z];
        let translation = scale(mat_vec(&rotation, eye), -1.0);
        let focal = 0.5 * height as f64 / num_traits::Float::tan(0.5 * fov_y_degrees.to_radians());
        let cam = Self {
            rotation,
            translation,
            fx: focal,
            fy: focal,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let intrinsics = [self.fx, self.fy, self.cx, self.cy];
        let mut all = self
            .rotation
            .iter()
            .flatten()
            .chain(self.translation.iter())
            .chain(intrinsics.iter());
        if all.any(|v| !v.is_finite()) {
            return Err(CameraError::NonFinite);
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Focal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::EmptyImage {
                width: self.width,
                height: self.height,
            });
        }
        let r = &self.rotation;
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot(r[i], r[j]) - want).abs());
            }
        }
        let det = dot(r[0], cross(r[1], r[2]));
        err = err.max((det - 1.0).abs());
        if err > 1e-6 {
            return Err(CameraError::Rotation(err));
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: Vec3<f64>) -> Vec3<f64> {
        let r = mat_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Camera center in world coordinates, `−Rᵀ t`.
    pub fn center(&self) -> Vec3<f64> {
        scale(mat_t_vec(&self.rotation, self.translation), -1.0)
    }

    /// Projects a camera-space point to pixel coordinates.
    pub fn project(&self, p_cam: Vec3<f64>) -> [f64; 2] {
        [
            self.fx * p_cam[0] / p_cam[2] + self.cx,
            self.fy * p_cam[1] / p_cam[2] + self.cy,
        ]
    }

    /// Camera-space point at pixel-center `(i, j)` with depth `z`.
    pub fn back_project(&self, i: usize, j: usize, z: f64) -> Vec3<f64> {
        let u = i as f64 + 0.5;
        let v = j as f64 + 0.5;
        [(u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z]
    }

    /// The 4×4 world-to-camera matrix, row-major.
    pub fn extrinsic_matrix(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
            r[2][2], t[2], 0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_matrix(
        extrinsic: &[f64; 16],
        intrinsic: [f64; 4],
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        let e = extrinsic;
        let cam = Self {
            rotation: [[e[0], e[1], e[2]], [e[4], e[5], e[6]], [e[8], e[9], e[10]]],
            translation: [e[3], e[7], e[11]],
            fx: intrinsic[0],
            fy: intrinsic[1],
            cx: intrinsic[2],
            cy: intrinsic[3],
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        self.fx *= sx;
        self.cx *= sx;
        self.fy *= sy;
        self.cy *= sy;
        self.width = width;
        self.height = height;
        self
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}
