//! Blendshape animation: `θ = θ_rest + Σᵢ wᵢ (θᵢ − θ_rest)` applied to every
//! splat field, plus keyframe timelines and named expression presets.

use alloc::vec::Vec;

use crate::asset::{channel_index, AvatarAsset, BlendWeights, DEFAULT_CHANNEL_COUNT};
use crate::gaussian::{normalize_quaternion_f64, Gaussian, GaussianSet};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AnimationError {
    #[error("expected {expected} blend weights, got {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("component {component} has {found} splats, rest has {expected}")]
    SplatCount {
        component: usize,
        expected: usize,
        found: usize,
    },
    #[error("timeline is empty")]
    EmptyTimeline,
    #[error("timeline timestamps must be finite and strictly increasing (frame {0})")]
    TimestampOrder(usize),
    #[error("sample rate must be positive and finite")]
    SampleRate,
    #[error("unknown expression preset {0:?}")]
    UnknownPreset(alloc::string::String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendOptions {
    /// Lower bound applied to every blended scale component.
    pub scale_floor: f32,
}

impl Default for BlendOptions {
    fn default() -> Self {
        Self { scale_floor: 1e-6 }
    }
}

/// Poses an asset with the default [`BlendOptions`].
pub fn blend(asset: &AvatarAsset, weights: &BlendWeights) -> Result<GaussianSet, AnimationError> {
    blend_with(asset, weights, &BlendOptions::default())
}

/// Linear blend of every field in double precision, stored as f32.
///
/// Orientations are blended as 4-vectors and renormalized (a blend that
/// collapses to zero keeps the rest orientation). Opacity and color are
/// clamped to `[0, 1]` and scales floored afterwards; weights outside
/// `[0, 1]` extrapolate.
pub fn blend_with(
    asset: &AvatarAsset,
    weights: &BlendWeights,
    options: &BlendOptions,
) -> Result<GaussianSet, AnimationError> {
    let k = asset.components.len();
    if weights.len() != k {
        return Err(AnimationError::WeightCount {
            expected: k,
            found: weights.len(),
        });
    }
    let m = asset.rest.len();
    for (component, comp) in asset.components.iter().enumerate() {
        if comp.len() != m {
            return Err(AnimationError::SplatCount {
                component,
                expected: m,
                found: comp.len(),
            });
        }
    }

    let mut acc: Vec<[f64; 14]> = asset
        .rest
        .gaussians
        .iter()
        .map(|g| g.to_array().map(f64::from))
        .collect();
    for (comp, &w) in asset.components.iter().zip(weights.as_slice()) {
        // A zero weight contributes exactly nothing.
        if w == 0.0 {
            continue;
        }
        let w = w as f64;
        for ((a, c), r) in acc
            .iter_mut()
            .zip(&comp.gaussians)
            .zip(&asset.rest.gaussians)
        {
            let (ca, ra) = (c.to_array(), r.to_array());
            for f in 0..14 {
                a[f] += w * (ca[f] as f64 - ra[f] as f64);
            }
        }
    }

    let floor = options.scale_floor;
    let gaussians = acc
        .iter()
        .zip(&asset.rest.gaussians)
        .map(|(a, rest)| {
            let orientation =
                normalize_quaternion_f64([a[6], a[7], a[8], a[9]]).unwrap_or(rest.orientation);
            Gaussian {
                position: [a[0] as f32, a[1] as f32, a[2] as f32],
                scale: [
                    (a[3] as f32).max(floor),
                    (a[4] as f32).max(floor),
                    (a[5] as f32).max(floor),
                ],
                orientation,
                color: [
                    (a[10] as f32).clamp(0.0, 1.0),
                    (a[11] as f32).clamp(0.0, 1.0),
                    (a[12] as f32).clamp(0.0, 1.0),
                ],
                opacity: (a[13] as f32).clamp(0.0, 1.0),
            }
        })
        .collect();
    Ok(GaussianSet::new(gaussians))
}

/// Keyframed blend weights, e.g. a recorded tracker stream.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendTimeline {
    pub frames: Vec<(f64, BlendWeights)>,
    /// Frame-rate hint of the source stream.
    pub rate_hint: Option<f64>,
}

impl BlendTimeline {
    pub fn new(frames: Vec<(f64, BlendWeights)>) -> Result<Self, AnimationError> {
        let t = Self {
            frames,
            rate_hint: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), AnimationError> {
        if self.frames.is_empty() {
            return Err(AnimationError::EmptyTimeline);
        }
        let k = self.frames[0].1.len();
        for (i, (t, w)) in self.frames.iter().enumerate() {
            if !t.is_finite() || (i > 0 && *t <= self.frames[i - 1].0) {
                return Err(AnimationError::TimestampOrder(i));
            }
            if w.len() != k {
                return Err(AnimationError::WeightCount {
                    expected: k,
                    found: w.len(),
                });
            }
        }
        Ok(())
    }

    pub fn start(&self) -> f64 {
        self.frames.first().map_or(0.0, |f| f.0)
    }

    pub fn end(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.0)
    }

    /// Weights at time `t`: linear between keyframes, held constant before
    /// the first and after the last.
    pub fn weights_at(&self, t: f64) -> Result<BlendWeights, AnimationError> {
        let frames = &self.frames;
        let Some(first) = frames.first() else {
            return Err(AnimationError::EmptyTimeline);
        };
        if t <= first.0 {
            return Ok(first.1.clone());
        }
        let last = frames.last().unwrap();
        if t >= last.0 {
            return Ok(last.1.clone());
        }
        // First keyframe strictly after t.
        let hi = frames.partition_point(|(ft, _)| *ft <= t);
        let (t0, w0) = &frames[hi - 1];
        if *t0 == t {
            return Ok(w0.clone());
        }
        let (t1, w1) = &frames[hi];
        let s = (t - t0) / (t1 - t0);
        Ok(BlendWeights(
            w0.0.iter()
                .zip(&w1.0)
                .map(|(&a, &b)| (a as f64 + (b as f64 - a as f64) * s) as f32)
                .collect(),
        ))
    }

    /// Sample times `start + n / rate` covering `[start, end]`.
    pub fn sample_times(&self, rate: f64) -> Result<Vec<f64>, AnimationError> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(AnimationError::SampleRate);
        }
        if self.frames.is_empty() {
            return Err(AnimationError::EmptyTimeline);
        }
        let start = self.start();
        let span = self.end() - start;
        let count = (span * rate + 1e-9) as usize + 1;
        Ok((0..count).map(|n| start + n as f64 / rate).collect())
    }

    pub fn resample(&self, rate: f64) -> Result<Vec<(f64, BlendWeights)>, AnimationError> {
        self.validate()?;
        self.sample_times(rate)?
            .into_iter()
            .map(|t| Ok((t, self.weights_at(t)?)))
            .collect()
    }
}

/// Resamples the timeline at `rate` frames per second and poses one set per
/// sample.
pub fn blend_timeline(
    asset: &AvatarAsset,
    timeline: &BlendTimeline,
    rate: f64,
) -> Result<Vec<GaussianSet>, AnimationError> {
    timeline
        .resample(rate)?
        .iter()
        .map(|(_, w)| blend(asset, w))
        .collect()
}

/// Names accepted by [`emotion_preset`].
pub const EMOTION_PRESETS: [&str; 6] = [
    "neutrality",
    "happiness",
    "frustration",
    "playfulness",
    "anger",
    "surprise",
];

/// Fixed FACS weight vectors for a few basic expressions.
///
/// | preset      | channels                                                        |
/// |-------------|-----------------------------------------------------------------|
/// | neutrality  | none (rest pose)                                                |
/// | happiness   | mouthSmileLeft/Right 0.8                                        |
/// | frustration | browDownLeft/Right 0.6, mouthFrownLeft/Right 0.7                |
/// | playfulness | eyeBlinkLeft 1.0, mouthSmileLeft 0.7, jawLeft 0.3, lipsPucker 0.4 |
/// | anger       | browDownLeft/Right 1.0, mouthStretchLeft/Right 0.5, jawOpen 0.2  |
/// | surprise    | browUpLeft/Right 1.0, jawOpen 0.7                               |
pub fn emotion_preset(name: &str) -> Result<BlendWeights, AnimationError> {
    let entries: &[(&str, f32)] = match name {
        "neutrality" => &[],
        "happiness" => &[("mouthSmileLeft", 0.8), ("mouthSmileRight", 0.8)],
        "frustration" => &[
            ("browDownLeft", 0.6),
            ("browDownRight", 0.6),
            ("mouthFrownLeft", 0.7),
            ("mouthFrownRight", 0.7),
        ],
        "playfulness" => &[
            ("eyeBlinkLeft", 1.0),
            ("mouthSmileLeft", 0.7),
            ("jawLeft", 0.3),
            ("lipsPucker", 0.4),
        ],
        "anger" => &[
            ("browDownLeft", 1.0),
            ("browDownRight", 1.0),
            ("mouthStretchLeft", 0.5),
            ("mouthStretchRight", 0.5),
            ("jawOpen", 0.2),
        ],
        "surprise" => &[("browUpLeft", 1.0), ("browUpRight", 1.0), ("jawOpen", 0.7)],
        other => return Err(AnimationError::UnknownPreset(other.into())),
    };
    let mut w = BlendWeights::zeros(DEFAULT_CHANNEL_COUNT);
    for (channel, value) in entries {
        let i = channel_index(channel).expect("preset uses a FACS channel");
        w.0[i] = *value;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::FACS_CHANNELS;
    use alloc::vec;

    fn asset_with_component(pos: [f32; 3]) -> AvatarAsset {
        let rest = GaussianSet::new(vec![Gaussian::new(
            [0.0; 3],
            [0.1; 3],
            [1.0, 0.0, 0.0, 0.0],
            [0.5; 3],
            0.5,
        )]);
        let mut asset = AvatarAsset::from_rest(rest);
        asset.components[0].gaussians[0].position = pos;
        asset
    }

    #[test]
    fn half_weight_moves_halfway() {
        let asset = asset_with_component([0.2, 0.0, 0.0]);
        let mut w = BlendWeights::zeros(16);
        w.0[0] = 0.5;
        let out = blend(&asset, &w).unwrap();
        // 0 + 0.5 · (0.2 − 0), evaluated in f64 from the stored f32 0.2.
        assert_eq!(
            out.gaussians[0].position,
            [(0.5 * (0.2f32 as f64)) as f32, 0.0, 0.0]
        );
        assert!((out.gaussians[0].position[0] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn wrong_weight_count_is_an_error() {
        let asset = asset_with_component([0.2, 0.0, 0.0]);
        assert_eq!(
            blend(&asset, &BlendWeights::zeros(3)),
            Err(AnimationError::WeightCount {
                expected: 16,
                found: 3
            })
        );
    }

    #[test]
    fn collapsing_orientation_falls_back_to_rest() {
        let mut asset = asset_with_component([0.0; 3]);
        asset.components[1].gaussians[0].orientation = [-1.0, 0.0, 0.0, 0.0];
        let mut w = BlendWeights::zeros(16);
        w.0[1] = 0.5;
        let out = blend(&asset, &w).unwrap();
        assert_eq!(out.gaussians[0].orientation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn overshoot_is_clamped() {
        let mut asset = asset_with_component([0.0; 3]);
        asset.components[2].gaussians[0].opacity = 1.0;
        asset.components[2].gaussians[0].scale = [0.01; 3];
        let mut w = BlendWeights::zeros(16);
        w.0[2] = 3.0;
        let g = blend(&asset, &w).unwrap().gaussians[0];
        assert_eq!(g.opacity, 1.0);
        assert!(g.scale.iter().all(|&s| s == 1e-6));
    }

    #[test]
    fn timeline_interpolates_and_holds_ends() {
        let mut hi = BlendWeights::zeros(16);
        hi.0[6] = 1.0;
        let tl = BlendTimeline::new(vec![(0.0, BlendWeights::zeros(16)), (1.0, hi)]).unwrap();
        assert_eq!(tl.weights_at(0.5).unwrap().0[6], 0.5);
        assert_eq!(tl.weights_at(-3.0).unwrap().0[6], 0.0);
        assert_eq!(tl.weights_at(7.0).unwrap().0[6], 1.0);
        assert_eq!(
            tl.sample_times(4.0).unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
    }

    #[test]
    fn timeline_rejects_bad_input() {
        assert_eq!(
            BlendTimeline::new(vec![]),
            Err(AnimationError::EmptyTimeline)
        );
        let w = BlendWeights::zeros(16);
        assert_eq!(
            BlendTimeline::new(vec![(1.0, w.clone()), (1.0, w)]),
            Err(AnimationError::TimestampOrder(1))
        );
    }

    #[test]
    fn presets() {
        assert!(emotion_preset("neutrality")
            .unwrap()
            .0
            .iter()
            .all(|&w| w == 0.0));
        let happy = emotion_preset("happiness").unwrap();
        for (i, &w) in happy.0.iter().enumerate() {
            let smile =
                FACS_CHANNELS[i] == "mouthSmileLeft" || FACS_CHANNELS[i] == "mouthSmileRight";
            assert_eq!(w != 0.0, smile, "channel {}", FACS_CHANNELS[i]);
        }
        for name in EMOTION_PRESETS {
            let w = emotion_preset(name).unwrap();
            assert_eq!(w.len(), 16);
            assert!(w.0.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(matches!(
            emotion_preset("boredom"),
            Err(AnimationError::UnknownPreset(_))
        ));
    }
}
