#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;
use smoj_core::{Camera, Executor, Gaussian, GaussianSet};

/// Executor that spreads items over `threads` OS threads in contiguous
/// chunks.
pub struct Threads(pub usize);

impl Executor for Threads {
    fn map_indexed<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        let chunk = n.div_ceil(self.0.max(1)).max(1);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    let f = &f;
                    s.spawn(move || (start..(start + chunk).min(n)).map(f).collect::<Vec<R>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().unwrap())
                .collect()
        })
    }
}

pub fn random_gaussian(rng: &mut StdRng) -> Gaussian {
    let q: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    Gaussian::new(
        std::array::from_fn(|_| rng.random_range(-0.8..0.8)),
        std::array::from_fn(|_| rng.random_range(0.05..0.4)),
        q,
        std::array::from_fn(|_| rng.random_range(0.0..1.0)),
        rng.random_range(0.05..1.0),
    )
}

pub fn random_set(rng: &mut StdRng, m: usize) -> GaussianSet {
    GaussianSet::new((0..m).map(|_| random_gaussian(rng)).collect())
}

/// Camera on a sphere of radius 2.5 to 5 around the origin, looking at it.
pub fn random_camera(rng: &mut StdRng, width: u32, height: u32) -> Camera {
    loop {
        let d: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if !(0.2..=1.0).contains(&n) {
            continue;
        }
        let r = rng.random_range(2.5..5.0);
        let eye = d.map(|v| v / n * r);
        let fov = rng.random_range(30.0..70.0);
        if let Ok(cam) = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], width, height, fov) {
            return cam;
        }
    }
}

/// Largest relative error between analytic and numeric gradients. Entries
/// smaller than a tenth of the largest numeric magnitude are measured
/// relative to that tenth.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let floor = 0.1 * numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor).max(1e-300))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_gradient(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Default-profile asset whose components are small random perturbations of
/// a random rest set; every field stays within its valid range.
pub fn random_asset(rng: &mut StdRng, m: usize) -> smoj_core::AvatarAsset {
    let rest = random_set(rng, m);
    let mut asset = smoj_core::AvatarAsset::from_rest(rest.clone());
    for comp in &mut asset.components {
        for (g, r) in comp.gaussians.iter_mut().zip(&rest.gaussians) {
            let q: [f32; 4] =
                std::array::from_fn(|i| r.orientation[i] + rng.random_range(-0.3..0.3));
            *g = Gaussian::new(
                std::array::from_fn(|i| r.position[i] + rng.random_range(-0.1..0.1)),
                std::array::from_fn(|i| (r.scale[i] + rng.random_range(-0.04..0.04)).max(0.01)),
                q,
                std::array::from_fn(|i| (r.color[i] + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0)),
                (r.opacity + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0),
            );
        }
    }
    asset
}
