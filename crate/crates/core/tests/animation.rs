mod common;

use common::random_asset;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use smoj_core::animation::{blend_with, BlendOptions, EMOTION_PRESETS};
use smoj_core::asset::channel_index;
use smoj_core::{
    blend, blend_timeline, emotion_preset, AvatarAsset, BlendTimeline, BlendWeights, GaussianSet,
};

/// Fields blended linearly (everything but orientation), as f64.
fn linear_fields(set: &GaussianSet) -> Vec<f64> {
    set.gaussians
        .iter()
        .flat_map(|g| {
            let a = g.to_array();
            a[..6]
                .iter()
                .chain(&a[10..])
                .map(|v| *v as f64)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Asset whose blends stay inside every clamp for weights summing to ≤ 1.
fn interior_asset(rng: &mut StdRng, m: usize) -> AvatarAsset {
    let mut asset = random_asset(rng, m);
    for set in std::iter::once(&mut asset.rest).chain(&mut asset.components) {
        for g in &mut set.gaussians {
            g.opacity = g.opacity.clamp(0.2, 0.8);
            g.color = g.color.map(|c| c.clamp(0.2, 0.8));
        }
    }
    asset
}

fn random_weights(rng: &mut StdRng, total: f64) -> BlendWeights {
    let raw: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    BlendWeights(raw.iter().map(|w| (w / sum * total) as f32).collect())
}

#[test]
fn zero_weights_reproduce_rest() {
    let mut rng = StdRng::seed_from_u64(1);
    let asset = random_asset(&mut rng, 25);
    assert!(blend(&asset, &BlendWeights::zeros(16))
        .unwrap()
        .bit_eq(&asset.rest));
}

#[test]
fn one_hot_weights_reproduce_each_component() {
    let mut rng = StdRng::seed_from_u64(2);
    let asset = random_asset(&mut rng, 25);
    for i in 0..16 {
        let out = blend(&asset, &BlendWeights::one_hot(16, i)).unwrap();
        assert!(out.bit_eq(&asset.components[i]), "component {i}");
    }
}

#[test]
fn single_timeline_keyframe_holds() {
    let mut rng = StdRng::seed_from_u64(3);
    let asset = random_asset(&mut rng, 5);
    let w = random_weights(&mut rng, 0.8);
    let tl = BlendTimeline::new(vec![(2.0, w.clone())]).unwrap();
    let expected = blend(&asset, &w).unwrap();
    for t in [-1.0, 2.0, 7.5] {
        assert!(blend(&asset, &tl.weights_at(t).unwrap())
            .unwrap()
            .bit_eq(&expected));
    }
    let frames = blend_timeline(&asset, &tl, 30.0).unwrap();
    assert_eq!(frames.len(), 1);
    assert!(frames[0].bit_eq(&expected));
}

#[test]
fn timeline_midpoint_blends_half_weights() {
    let mut rng = StdRng::seed_from_u64(4);
    let asset = random_asset(&mut rng, 5);
    let tl = BlendTimeline::new(vec![
        (0.0, BlendWeights::zeros(16)),
        (1.0, BlendWeights(vec![1.0; 16])),
    ])
    .unwrap();
    let frames = blend_timeline(&asset, &tl, 2.0).unwrap();
    assert_eq!(frames.len(), 3);
    assert!(frames[1].bit_eq(&blend(&asset, &BlendWeights(vec![0.5; 16])).unwrap()));
}

#[test]
fn dense_timeline_replays_its_keyframes() {
    let mut rng = StdRng::seed_from_u64(5);
    let asset = random_asset(&mut rng, 8);
    let rate = 25.0;
    let keys: Vec<(f64, BlendWeights)> = (0..20)
        .map(|n| (n as f64 / rate, random_weights(&mut rng, 1.0)))
        .collect();
    let tl = BlendTimeline::new(keys.clone()).unwrap();
    let frames = blend_timeline(&asset, &tl, rate).unwrap();
    assert_eq!(frames.len(), keys.len());
    for ((_, w), f) in keys.iter().zip(&frames) {
        assert!(f.bit_eq(&blend(&asset, w).unwrap()));
    }
}

#[test]
fn timelines_reject_bad_input() {
    let mut rng = StdRng::seed_from_u64(6);
    let asset = random_asset(&mut rng, 2);
    assert!(BlendTimeline::new(vec![]).is_err());
    let w = BlendWeights::zeros(16);
    assert!(BlendTimeline::new(vec![(1.0, w.clone()), (1.0, w.clone())]).is_err());
    let tl = BlendTimeline::new(vec![(0.0, w)]).unwrap();
    assert!(blend_timeline(&asset, &tl, 0.0).is_err());
}

#[test]
fn presets_follow_their_channel_semantics() {
    assert!(emotion_preset("neutrality")
        .unwrap()
        .0
        .iter()
        .all(|w| *w == 0.0));
    let happy = emotion_preset("happiness").unwrap();
    let smiles = [
        channel_index("mouthSmileLeft").unwrap(),
        channel_index("mouthSmileRight").unwrap(),
    ];
    for (i, w) in happy.0.iter().enumerate() {
        assert_eq!(*w != 0.0, smiles.contains(&i), "channel {i}");
    }
    for name in EMOTION_PRESETS {
        let w = emotion_preset(name).unwrap();
        assert_eq!(w.len(), 16);
        assert!(w.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(emotion_preset("boredom").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blend_is_linear_in_the_weights(seed in any::<u64>(), alpha in 0.0f64..0.5, beta in 0.0f64..0.5) {
        let mut rng = StdRng::seed_from_u64(seed);
        let asset = interior_asset(&mut rng, 6);
        let u = random_weights(&mut rng, 0.9);
        let v = random_weights(&mut rng, 0.9);
        let mix = BlendWeights(
            u.0.iter().zip(&v.0).map(|(a, b)| (alpha * *a as f64 + beta * *b as f64) as f32).collect(),
        );
        let rest = linear_fields(&asset.rest);
        let bu = linear_fields(&blend(&asset, &u).unwrap());
        let bv = linear_fields(&blend(&asset, &v).unwrap());
        let bm = linear_fields(&blend(&asset, &mix).unwrap());
        for k in 0..rest.len() {
            let predicted = rest[k] + alpha * (bu[k] - rest[k]) + beta * (bv[k] - rest[k]);
            prop_assert!(
                (bm[k] - predicted).abs() <= 1e-5 * predicted.abs().max(1.0),
                "field {}: {} vs {}", k, bm[k], predicted
            );
        }
    }

    #[test]
    fn blended_orientations_are_unit_and_finite(seed in any::<u64>(), lo in -3.0f32..0.0, hi in 0.0f32..3.0) {
        let mut rng = StdRng::seed_from_u64(seed);
        let asset = random_asset(&mut rng, 10);
        let w = BlendWeights((0..16).map(|_| rng.random_range(lo..=hi)).collect());
        let out = blend(&asset, &w).unwrap();
        for g in &out.gaussians {
            prop_assert!(g.to_array().iter().all(|v| v.is_finite()));
            prop_assert!((g.orientation_norm() - 1.0).abs() <= 1e-6);
            prop_assert!((0.0..=1.0).contains(&g.opacity));
            prop_assert!(g.scale.iter().all(|s| *s >= 1e-6));
        }
    }

    #[test]
    fn scale_floor_is_configurable(seed in any::<u64>(), floor in 1e-6f32..0.5) {
        let mut rng = StdRng::seed_from_u64(seed);
        let asset = random_asset(&mut rng, 4);
        let w = BlendWeights(vec![-2.0; 16]);
        let out = blend_with(&asset, &w, &BlendOptions { scale_floor: floor }).unwrap();
        prop_assert!(out.gaussians.iter().all(|g| g.scale.iter().all(|s| *s >= floor)));
    }
}
