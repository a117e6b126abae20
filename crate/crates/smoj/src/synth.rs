//! Seeded synthetic scenes and avatars for demos, benches and self-closure
//! fits. All generators use ChaCha8, so a seed gives the same output on
//! every platform and release.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use smoj_core::asset::facs_channel_names;
use smoj_core::{AvatarAsset, Gaussian, GaussianSet};

/// `m` random splats in a cube of half-width 0.5 around the origin.
pub fn random_scene(m: usize, seed: u64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GaussianSet::new(
        (0..m)
            .map(|_| {
                let q: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                Gaussian::new(
                    std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
                    std::array::from_fn(|_| rng.random_range(0.08..0.25)),
                    q,
                    std::array::from_fn(|_| rng.random_range(0.1..0.9)),
                    rng.random_range(0.5..0.95),
                )
            })
            .collect(),
    )
}

/// Adds `N(0, σ_pos)` to every position and `N(0, σ_color)` to every color
/// component, clamping colors to `[0, 1]`.
pub fn perturb(set: &GaussianSet, sigma_pos: f64, sigma_color: f64, seed: u64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Normal::new(0.0, sigma_pos.max(0.0)).expect("finite sigma");
    let col = Normal::new(0.0, sigma_color.max(0.0)).expect("finite sigma");
    GaussianSet::new(
        set.gaussians
            .iter()
            .map(|g| {
                let mut g = *g;
                g.position = g.position.map(|p| p + pos.sample(&mut rng) as f32);
                g.color = g
                    .color
                    .map(|c| (c + col.sample(&mut rng) as f32).clamp(0.0, 1.0));
                g
            })
            .collect(),
    )
}

const HEAD_RADII: [f64; 3] = [0.75, 1.0, 0.85];
const SKIN: [f32; 3] = [0.86, 0.66, 0.55];
const HAIR: [f32; 3] = [0.24, 0.16, 0.11];
const BROW: [f32; 3] = [0.30, 0.20, 0.15];
const EYE: [f32; 3] = [0.10, 0.09, 0.09];
const LIPS: [f32; 3] = [0.74, 0.32, 0.32];

/// Face-space region: center `(x, y)` on the front of the head, falloff
/// radius and displacement at full activation.
struct Region {
    center: [f64; 2],
    sigma: f64,
    shift: [f64; 3],
}

fn region(channel: &str) -> Region {
    let r = |x: f64, y: f64, sigma: f64, shift: [f64; 3]| Region {
        center: [x, y],
        sigma,
        shift,
    };
    match channel {
        "browDownLeft" => r(0.28, 0.36, 0.12, [0.0, -0.06, 0.0]),
        "browDownRight" => r(-0.28, 0.36, 0.12, [0.0, -0.06, 0.0]),
        "browUpLeft" => r(0.28, 0.36, 0.12, [0.0, 0.08, 0.0]),
        "browUpRight" => r(-0.28, 0.36, 0.12, [0.0, 0.08, 0.0]),
        "eyeBlinkLeft" => r(0.27, 0.16, 0.07, [0.0, -0.04, 0.01]),
        "eyeBlinkRight" => r(-0.27, 0.16, 0.07, [0.0, -0.04, 0.01]),
        "jawOpen" => r(0.0, -0.75, 0.3, [0.0, -0.15, 0.0]),
        "jawLeft" => r(0.0, -0.75, 0.3, [0.08, 0.0, 0.0]),
        "jawRight" => r(0.0, -0.75, 0.3, [-0.08, 0.0, 0.0]),
        "lipsPucker" => r(0.0, -0.45, 0.12, [0.0, 0.0, 0.07]),
        "mouthFrownLeft" => r(0.2, -0.45, 0.08, [0.0, -0.05, 0.0]),
        "mouthFrownRight" => r(-0.2, -0.45, 0.08, [0.0, -0.05, 0.0]),
        "mouthSmileLeft" => r(0.2, -0.43, 0.08, [0.03, 0.06, 0.0]),
        "mouthSmileRight" => r(-0.2, -0.43, 0.08, [-0.03, 0.06, 0.0]),
        "mouthStretchLeft" => r(0.2, -0.45, 0.08, [0.06, -0.02, 0.0]),
        "mouthStretchRight" => r(-0.2, -0.45, 0.08, [-0.06, -0.02, 0.0]),
        _ => unreachable!("default profile channel"),
    }
}

fn near(p: [f64; 3], x: f64, y: f64, r: f64) -> bool {
    p[2] > 0.0 && (p[0] - x).hypot(p[1] - y) < r
}

fn albedo(p: [f64; 3]) -> [f32; 3] {
    if p[1] > 0.6 || p[2] < -0.25 {
        HAIR
    } else if near(p, 0.28, 0.36, 0.1) || near(p, -0.28, 0.36, 0.1) {
        BROW
    } else if near(p, 0.27, 0.16, 0.06) || near(p, -0.27, 0.16, 0.06) {
        EYE
    } else if p[2] > 0.0 && p[0].abs() < 0.2 && (p[1] + 0.45).abs() < 0.05 {
        LIPS
    } else {
        SKIN
    }
}

/// Rotation taking +z to the unit vector `n`, scalar first.
fn align_z(n: [f64; 3]) -> [f32; 4] {
    if n[2] < -0.999_999 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    [(1.0 + n[2]) as f32, -n[1] as f32, n[0] as f32, 0.0]
}

/// A stylized head of `m` splats on an ellipsoid shell, front facing +z,
/// with one localized deformation per default FACS channel. Splats are
/// disks tangent to the shell, so both render modes give a closed surface.
pub fn synthetic_head(m: usize, seed: u64) -> AvatarAsset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_r = HEAD_RADII.iter().sum::<f64>() / 3.0;
    let spacing = (4.0 * std::f64::consts::PI * mean_r * mean_r / m.max(1) as f64).sqrt();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut points = Vec::with_capacity(m);
    let rest = GaussianSet::new(
        (0..m)
            .map(|k| {
                let y = 1.0 - 2.0 * (k as f64 + 0.5) / m as f64;
                let r = (1.0 - y * y).sqrt();
                let phi = golden * k as f64;
                let u = [r * phi.sin(), y, r * phi.cos()];
                let p: [f64; 3] = std::array::from_fn(|i| u[i] * HEAD_RADII[i]);
                let n = {
                    let g: [f64; 3] = std::array::from_fn(|i| u[i] / HEAD_RADII[i]);
                    let len = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    g.map(|v| v / len)
                };
                points.push(p);
                let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.04f32..0.04);
                let base = albedo(p);
                let s = (0.85 * spacing) as f32;
                Gaussian::new(
                    p.map(|v| v as f32),
                    [s, s, 0.1 * s],
                    align_z(n),
                    base.map(|c| (c + jitter(&mut rng)).clamp(0.0, 1.0)),
                    0.95,
                )
            })
            .collect(),
    );
    let components = facs_channel_names()
        .iter()
        .map(|name| {
            let reg = region(name);
            GaussianSet::new(
                rest.gaussians
                    .iter()
                    .zip(&points)
                    .map(|(g, p)| {
                        let d2 = (p[0] - reg.center[0]).powi(2) + (p[1] - reg.center[1]).powi(2);
                        let w = if p[2] > 0.0 {
                            (-0.5 * d2 / (reg.sigma * reg.sigma)).exp()
                        } else {
                            0.0
                        };
                        let mut g = *g;
                        for (c, s) in g.position.iter_mut().zip(reg.shift) {
                            *c += (w * s) as f32;
                        }
                        g
                    })
                    .collect(),
            )
        })
        .collect();
    AvatarAsset {
        rest,
        components,
        channel_names: facs_channel_names(),
        metadata: Default::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smoj_core::validate_asset;

    #[test]
    fn head_is_valid_and_seeded() {
        let a = synthetic_head(500, 3);
        assert!(validate_asset(&a).is_empty(), "{:?}", validate_asset(&a));
        assert!(a.bit_eq(&synthetic_head(500, 3)));
        assert!(!a.bit_eq(&synthetic_head(500, 4)));
        // Every channel moves something.
        assert!(smoj_core::component_deltas(&a)
            .iter()
            .all(|d| d.max_abs() > 1e-3));
    }

    #[test]
    fn empty_head_is_valid() {
        assert!(validate_asset(&synthetic_head(0, 0)).is_empty());
    }

    #[test]
    fn perturbation_keeps_colors_in_range() {
        let s = random_scene(30, 1);
        let p = perturb(&s, 0.05, 0.5, 2);
        assert!(p
            .gaussians
            .iter()
            .flat_map(|g| g.color)
            .all(|c| (0.0..=1.0).contains(&c)));
        assert!(perturb(&s, 0.0, 0.0, 2).bit_eq(&s));
    }
}
