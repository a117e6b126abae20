mod common;

use common::{random_camera, random_set, Threads};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use smoj_core::render::{
    falloff, render_splats, render_turntable, turntable_cameras, Turntable, TurntableError,
};
use smoj_core::{
    render, render_reference, render_with, Camera, Gaussian, GaussianSet, RenderConfig, RenderMode,
    RenderOutput, Serial,
};

fn front_camera(size: u32) -> Camera {
    Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], size, size, 40.0).unwrap()
}

fn splat(position: [f32; 3], scale: f32, color: [f32; 3], opacity: f32) -> Gaussian {
    Gaussian::new(position, [scale; 3], [1.0, 0.0, 0.0, 0.0], color, opacity)
}

#[test]
fn empty_set_renders_background() {
    let cfg = RenderConfig {
        background: [0.25, 0.5, 0.75],
        ..RenderConfig::default()
    };
    let cam = front_camera(20);
    let out = render(&GaussianSet::default(), &cam, &cfg).unwrap();
    assert!(out.alpha.iter().all(|a| *a == 0.0));
    for px in out.rgb.chunks(3) {
        assert_eq!(px, &[0.25, 0.5, 0.75]);
    }
    let reference = render_reference(&GaussianSet::default(), &cam, &cfg).unwrap();
    assert!(out.bit_eq(&reference));
}

#[test]
fn single_isotropic_splat_matches_projected_gaussian() {
    // Oracle: at the optical axis the Jacobian is diag(f/z, f/z), so the
    // screen covariance is ((f·s/z)² + 0.3)·I around the principal point.
    let size = 31;
    let cam = front_camera(size);
    let (s, o) = (0.3f64, 0.9f64);
    let set = GaussianSet::new(vec![splat([0.0; 3], s as f32, [1.0; 3], o as f32)]);
    let out = render(&set, &cam, &RenderConfig::default()).unwrap();
    let var = (cam.fx * s / 4.0).powi(2) + 0.3;
    let mut peak = (0.0f32, 0usize);
    for j in 0..size as usize {
        for i in 0..size as usize {
            let dx = i as f64 + 0.5 - cam.cx;
            let dy = j as f64 + 0.5 - cam.cy;
            let want = o * falloff((dx * dx + dy * dy) / var);
            let got = out.alpha[j * size as usize + i];
            assert!(
                (got as f64 - want).abs() < 1e-5,
                "pixel ({i}, {j}): {got} vs {want}"
            );
            if got > peak.0 {
                peak = (got, j * size as usize + i);
            }
        }
    }
    assert_eq!(peak.1, 15 * 31 + 15, "peak at the principal-point pixel");
    // Radially decreasing along the center row.
    let row = &out.alpha[15 * 31..16 * 31];
    for i in 15..30 {
        assert!(row[i + 1] <= row[i]);
    }
}

#[test]
fn two_splat_compositing_follows_hand_formula() {
    let cam = front_camera(31);
    let red = splat([0.0, 0.0, 0.5], 0.3, [1.0, 0.0, 0.0], 0.99);
    let blue = splat([0.0, 0.0, -0.5], 0.3, [0.0, 0.0, 1.0], 0.99);
    let center = 15 * 31 + 15;
    let cfg = RenderConfig::default();
    let single = |g: &Gaussian| {
        render(&GaussianSet::new(vec![*g]), &cam, &cfg)
            .unwrap()
            .alpha[center] as f64
    };
    let (a_red, a_blue) = (single(&red), single(&blue));
    let out = render(&GaussianSet::new(vec![blue, red]), &cam, &cfg).unwrap();
    let px = &out.rgb[3 * center..3 * center + 3];
    assert!((px[0] as f64 - a_red).abs() < 1e-6);
    assert!((px[2] as f64 - (1.0 - a_red) * a_blue).abs() < 1e-6);
    assert!(px[0] > 0.9 && px[2] < 0.1, "red in front dominates: {px:?}");

    // Swapping depths swaps the result.
    let mut red_back = red;
    let mut blue_front = blue;
    red_back.position[2] = -0.5;
    blue_front.position[2] = 0.5;
    let out = render(&GaussianSet::new(vec![red_back, blue_front]), &cam, &cfg).unwrap();
    let px = &out.rgb[3 * center..3 * center + 3];
    assert!(
        px[2] > 0.9 && px[0] < 0.1,
        "blue in front dominates: {px:?}"
    );
}

#[test]
fn single_splat_reference_is_bit_exact_without_termination() {
    let mut rng = StdRng::seed_from_u64(11);
    for mode in [RenderMode::Volumetric, RenderMode::Surfel] {
        for _ in 0..10 {
            let set = random_set(&mut rng, 1);
            let cam = random_camera(&mut rng, 24, 18);
            let cfg = RenderConfig {
                mode,
                termination: None,
                ..RenderConfig::default()
            };
            let a = render(&set, &cam, &cfg).unwrap();
            let b = render_reference(&set, &cam, &cfg).unwrap();
            assert!(a.bit_eq(&b));
        }
    }
}

#[test]
fn reference_rejects_large_sets() {
    let mut rng = StdRng::seed_from_u64(1);
    let set = random_set(&mut rng, 65);
    let err = render_reference(&set, &front_camera(8), &RenderConfig::default()).unwrap_err();
    assert!(err.to_string().contains("at most 64"));
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut cam = front_camera(8);
    cam.width = 0;
    assert!(render(&GaussianSet::default(), &cam, &RenderConfig::default()).is_err());
    let cfg = RenderConfig {
        tile_size: 0,
        ..RenderConfig::default()
    };
    assert!(render(&GaussianSet::default(), &front_camera(8), &cfg).is_err());
    let cfg = RenderConfig {
        termination: Some(1.0),
        ..RenderConfig::default()
    };
    assert!(render(&GaussianSet::default(), &front_camera(8), &cfg).is_err());
}

#[test]
fn splats_behind_the_camera_are_culled() {
    let cam = front_camera(16);
    let set = GaussianSet::new(vec![splat([0.0, 0.0, 5.0], 0.3, [1.0; 3], 1.0)]);
    let out = render(&set, &cam, &RenderConfig::default()).unwrap();
    assert!(out.alpha.iter().all(|a| *a == 0.0));
}

#[test]
fn surfel_normals_face_the_camera() {
    let cam = front_camera(31);
    // Disk in the z = 0 plane; its local z axis points at or away from the
    // camera depending on orientation.
    for q in [[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]] {
        let g = Gaussian::new([0.0; 3], [0.4, 0.4, 0.01], q, [1.0; 3], 0.9);
        let out = render(&GaussianSet::new(vec![g]), &cam, &RenderConfig::surfel()).unwrap();
        let c = 15 * 31 + 15;
        let n = &out.normal[3 * c..3 * c + 3];
        assert!((n[2] + 1.0).abs() < 1e-5, "{n:?}");
        assert!((out.depth[c] - 4.0).abs() < 1e-4);
        for p in 0..31 * 31 {
            let n = &out.normal[3 * p..3 * p + 3];
            let len = n.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!(len == 0.0 || (len - 1.0).abs() < 1e-4);
            assert!(out.alpha[p] >= 1e-4 || len == 0.0);
        }
    }
}

#[test]
fn volumetric_normals_are_zero() {
    let mut rng = StdRng::seed_from_u64(5);
    let out = render(
        &random_set(&mut rng, 10),
        &front_camera(16),
        &RenderConfig::default(),
    )
    .unwrap();
    assert!(out.normal.iter().all(|v| *v == 0.0));
}

#[test]
fn output_is_independent_of_thread_count_and_tile_size() {
    let mut rng = StdRng::seed_from_u64(42);
    let set = random_set(&mut rng, 300);
    let cam = random_camera(&mut rng, 70, 50);
    for mode in [RenderMode::Volumetric, RenderMode::Surfel] {
        let cfg = RenderConfig {
            mode,
            ..RenderConfig::default()
        };
        let serial = render_with(&Serial, &set, &cam, &cfg).unwrap();
        for threads in [2, 3, 8] {
            let par = render_with(&Threads(threads), &set, &cam, &cfg).unwrap();
            assert!(serial.bit_eq(&par), "{threads} threads");
        }
        // Tile size only changes which splats are visited, not the math.
        let cfg7 = RenderConfig {
            tile_size: 7,
            ..cfg
        };
        let tiled = render(&set, &cam, &cfg7).unwrap();
        assert!(serial.max_abs_diff(&tiled) <= 1e-6);
    }
}

#[test]
fn captured_rays_reproduce_coverage() {
    let mut rng = StdRng::seed_from_u64(8);
    let set = random_set(&mut rng, 40);
    let cam = random_camera(&mut rng, 33, 21);
    let splats = set.to_splats::<f64>();
    let cfg = RenderConfig::surfel();
    let (out, rays) = render_splats(&Serial, &splats, &cam, &cfg, true).unwrap();
    let rays = rays.unwrap();
    assert_eq!(rays.ray_count(), 33 * 21);
    for p in 0..rays.ray_count() {
        let (w, d) = rays.ray(p);
        let sum: f64 = w.iter().sum();
        assert!((sum - out.alpha[p]).abs() < 1e-12);
        if out.alpha[p] >= 1e-4 {
            let mean: f64 = w.iter().zip(d).map(|(w, d)| w * d).sum::<f64>() / out.alpha[p];
            assert!((mean - out.depth[p]).abs() < 1e-9);
        }
    }
}

#[test]
fn turntable_layout() {
    let center = [0.1, -0.2, 0.3];
    let tt = Turntable {
        n_views: 1,
        radius: 2.0,
        ..Turntable::default()
    };
    let cams = turntable_cameras(center, &tt).unwrap();
    let c = cams[0].center();
    assert!((c[0] - 0.1).abs() < 1e-12 && (c[1] + 0.2).abs() < 1e-12 && (c[2] - 2.3).abs() < 1e-12);

    let tt = Turntable {
        n_views: 10,
        radius: 2.0,
        ..Turntable::default()
    };
    let cams = turntable_cameras(center, &tt).unwrap();
    assert_eq!(cams.len(), 10);
    for (i, a) in cams.iter().enumerate() {
        let ca = a.center();
        let d: f64 = (0..3)
            .map(|k| (ca[k] - center[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((d - 2.0).abs() < 1e-9);
        for b in &cams[i + 1..] {
            let cb = b.center();
            let sep: f64 = (0..3).map(|k| (ca[k] - cb[k]).powi(2)).sum::<f64>().sqrt();
            assert!(sep > 0.1);
        }
    }
    assert!(matches!(
        turntable_cameras(center, &Turntable { n_views: 0, ..tt }),
        Err(TurntableError::NoViews)
    ));
}

#[test]
fn turntable_views_equal_direct_renders() {
    let mut rng = StdRng::seed_from_u64(3);
    let set = random_set(&mut rng, 30);
    let tt = Turntable {
        n_views: 4,
        radius: 3.0,
        width: 24,
        height: 24,
        fov_y_degrees: 45.0,
    };
    let cfg = RenderConfig::default();
    let (outs, cams) = render_turntable(&Serial, &set, &tt, &cfg).unwrap();
    for (o, c) in outs.iter().zip(&cams) {
        assert!(o.bit_eq(&render(&set, c, &cfg).unwrap()));
    }
    let degenerate = GaussianSet::new(vec![set.gaussians[0]; 3]);
    assert!(matches!(
        render_turntable(&Serial, &degenerate, &tt, &cfg),
        Err(TurntableError::Degenerate)
    ));
    assert!(render_turntable(&Serial, &GaussianSet::default(), &tt, &cfg).is_err());
}

fn max_diff(a: &RenderOutput, b: &RenderOutput) -> f32 {
    a.max_abs_diff(b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tiled_matches_reference(seed in any::<u64>(), m in 0usize..=16, surfel in any::<bool>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let set = random_set(&mut rng, m);
        let cam = random_camera(&mut rng, 40, 32);
        let cfg = RenderConfig {
            mode: if surfel { RenderMode::Surfel } else { RenderMode::Volumetric },
            ..RenderConfig::default()
        };
        let a = render(&set, &cam, &cfg).unwrap();
        let b = render_reference(&set, &cam, &cfg).unwrap();
        prop_assert!(max_diff(&a, &b) <= 1e-5);
    }

    #[test]
    fn adding_a_splat_never_decreases_alpha(seed in any::<u64>(), m in 0usize..12, surfel in any::<bool>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut set = random_set(&mut rng, m);
        let cam = random_camera(&mut rng, 24, 24);
        let cfg = RenderConfig {
            mode: if surfel { RenderMode::Surfel } else { RenderMode::Volumetric },
            termination: None,
            ..RenderConfig::default()
        };
        let before = render(&set, &cam, &cfg).unwrap();
        set.gaussians.push(common::random_gaussian(&mut rng));
        let after = render(&set, &cam, &cfg).unwrap();
        for (a, b) in before.alpha.iter().zip(&after.alpha) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn buffers_respect_their_ranges(seed in any::<u64>(), m in 0usize..40, surfel in any::<bool>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let set = random_set(&mut rng, m);
        let cam = random_camera(&mut rng, 24, 24);
        let cfg = RenderConfig {
            mode: if surfel { RenderMode::Surfel } else { RenderMode::Volumetric },
            ..RenderConfig::default()
        };
        let out = render(&set, &cam, &cfg).unwrap();
        prop_assert!(out.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert!(out.rgb.iter().all(|c| (0.0..=1.0 + 1e-6).contains(c)));
        prop_assert!(out.depth.iter().all(|d| *d >= 0.0));
        for (p, a) in out.alpha.iter().enumerate() {
            if *a < 1e-4 {
                prop_assert_eq!(out.depth[p], 0.0);
            }
        }
    }

    #[test]
    fn zero_opacity_gives_zero_alpha(seed in any::<u64>(), m in 0usize..20) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut set = random_set(&mut rng, m);
        for g in &mut set.gaussians {
            g.opacity = 0.0;
        }
        let out = render(&set, &random_camera(&mut rng, 16, 16), &RenderConfig::default()).unwrap();
        prop_assert!(out.alpha.iter().all(|a| *a == 0.0));
    }
}
