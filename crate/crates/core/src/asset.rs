//! Avatar assets: a rest-pose splat set plus one full splat set per
//! blendshape channel.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::gaussian::{GaussianSet, UNIT_QUATERNION_TOLERANCE};

/// The 16 FACS blendshape channels of the default profile, in storage order.
///
/// Names follow the ARKit / MediaPipe spelling so tracker output can be
/// matched by name.
pub const FACS_CHANNELS: [&str; 16] = [
    "browDownLeft",
    "browDownRight",
    "browUpLeft",
    "browUpRight",
    "eyeBlinkLeft",
    "eyeBlinkRight",
    "jawOpen",
    "jawLeft",
    "jawRight",
    "lipsPucker",
    "mouthFrownLeft",
    "mouthFrownRight",
    "mouthSmileLeft",
    "mouthSmileRight",
    "mouthStretchLeft",
    "mouthStretchRight",
];

/// Number of channels in the default profile.
pub const DEFAULT_CHANNEL_COUNT: usize = FACS_CHANNELS.len();

pub fn facs_channel_names() -> Vec<String> {
    FACS_CHANNELS.iter().map(|s| s.to_string()).collect()
}

pub fn channel_index(name: &str) -> Option<usize> {
    FACS_CHANNELS.iter().position(|c| *c == name)
}

/// Rest pose `θ_rest` and expression components `θ_1..θ_K`. Every component
/// holds the same number of splats as the rest set, in the same order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AvatarAsset {
    pub rest: GaussianSet,
    pub components: Vec<GaussianSet>,
    pub channel_names: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl AvatarAsset {
    /// An asset in the default profile whose components all equal `rest`.
    pub fn from_rest(rest: GaussianSet) -> Self {
        Self {
            components: (0..DEFAULT_CHANNEL_COUNT).map(|_| rest.clone()).collect(),
            rest,
            channel_names: facs_channel_names(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn splat_count(&self) -> usize {
        self.rest.len()
    }

    pub fn channel_count(&self) -> usize {
        self.components.len()
    }

    /// Bit-exact equality of every payload value, names and metadata.
    pub fn bit_eq(&self, other: &AvatarAsset) -> bool {
        self.rest.bit_eq(&other.rest)
            && self.components.len() == other.components.len()
            && self
                .components
                .iter()
                .zip(&other.components)
                .all(|(a, b)| a.bit_eq(b))
            && self.channel_names == other.channel_names
            && self.metadata == other.metadata
    }

    /// The set with index 0 = rest, `i + 1` = component `i`.
    pub fn set(&self, index: usize) -> Option<&GaussianSet> {
        if index == 0 {
            Some(&self.rest)
        } else {
            self.components.get(index - 1)
        }
    }
}

/// Blendshape weights, one per asset channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendWeights(pub Vec<f32>);

impl BlendWeights {
    pub fn zeros(k: usize) -> Self {
        Self(alloc::vec![0.0; k])
    }

    pub fn one_hot(k: usize, i: usize) -> Self {
        let mut w = Self::zeros(k);
        w.0[i] = 1.0;
        w
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// Which set of an asset a violation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetRef {
    Rest,
    Component(usize),
    /// A set outside any asset.
    Standalone,
}

impl fmt::Display for SetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetRef::Rest => f.write_str("rest"),
            SetRef::Component(i) => write!(f, "component {i}"),
            SetRef::Standalone => f.write_str("set"),
        }
    }
}

/// One broken invariant found by [`validate_asset`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ChannelCount {
        expected: usize,
        found: usize,
    },
    ChannelNameCount {
        names: usize,
        components: usize,
    },
    ChannelName {
        index: usize,
        expected: String,
        found: String,
    },
    CountMismatch {
        set: SetRef,
        expected: usize,
        found: usize,
    },
    NonUnitQuaternion {
        set: SetRef,
        splat: usize,
        norm: f64,
    },
    OpacityRange {
        set: SetRef,
        splat: usize,
        value: f32,
    },
    ColorRange {
        set: SetRef,
        splat: usize,
        value: f32,
    },
    NonPositiveScale {
        set: SetRef,
        splat: usize,
        value: f32,
    },
    NonFinite {
        set: SetRef,
        splat: usize,
    },
    WeightCount {
        expected: usize,
        found: usize,
    },
    WeightRange {
        channel: usize,
        value: f32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ChannelCount { expected, found } => {
                write!(f, "expected {expected} channels, found {found}")
            }
            Violation::ChannelNameCount { names, components } => {
                write!(f, "{names} channel names for {components} components")
            }
            Violation::ChannelName {
                index,
                expected,
                found,
            } => write!(
                f,
                "channel {index}: expected name {expected:?}, found {found:?}"
            ),
            Violation::CountMismatch {
                set,
                expected,
                found,
            } => write!(f, "{set}: {found} splats, rest has {expected}"),
            Violation::NonUnitQuaternion { set, splat, norm } => {
                write!(f, "{set} splat {splat}: orientation norm {norm}")
            }
            Violation::OpacityRange { set, splat, value } => {
                write!(f, "{set} splat {splat}: opacity {value} outside [0, 1]")
            }
            Violation::ColorRange { set, splat, value } => {
                write!(
                    f,
                    "{set} splat {splat}: color component {value} outside [0, 1]"
                )
            }
            Violation::NonPositiveScale { set, splat, value } => {
                write!(
                    f,
                    "{set} splat {splat}: scale component {value} not positive"
                )
            }
            Violation::NonFinite { set, splat } => {
                write!(f, "{set} splat {splat}: non-finite value")
            }
            Violation::WeightCount { expected, found } => {
                write!(f, "expected {expected} weights, found {found}")
            }
            Violation::WeightRange { channel, value } => {
                write!(f, "weight {channel} = {value} outside [0, 1]")
            }
        }
    }
}

/// Which naming rules [`validate_asset_with`] enforces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Profile {
    /// Exactly the 16 FACS channels, in order.
    #[default]
    Facs16,
    /// Any channel count; names only have to match the component count.
    Custom,
}

/// Checks every asset invariant under the default profile. An empty report
/// means the asset is valid.
pub fn validate_asset(asset: &AvatarAsset) -> Vec<Violation> {
    validate_asset_with(asset, Profile::Facs16)
}

pub fn validate_asset_with(asset: &AvatarAsset, profile: Profile) -> Vec<Violation> {
    let mut report = Vec::new();
    let k = asset.components.len();
    if asset.channel_names.len() != k {
        report.push(Violation::ChannelNameCount {
            names: asset.channel_names.len(),
            components: k,
        });
    }
    if profile == Profile::Facs16 {
        if k != DEFAULT_CHANNEL_COUNT {
            report.push(Violation::ChannelCount {
                expected: DEFAULT_CHANNEL_COUNT,
                found: k,
            });
        }
        for (index, (expected, found)) in FACS_CHANNELS.iter().zip(&asset.channel_names).enumerate()
        {
            if expected != found {
                report.push(Violation::ChannelName {
                    index,
                    expected: expected.to_string(),
                    found: found.clone(),
                });
            }
        }
    }

    let m = asset.rest.len();
    check_set(SetRef::Rest, &asset.rest, &mut report);
    for (i, comp) in asset.components.iter().enumerate() {
        if comp.len() != m {
            report.push(Violation::CountMismatch {
                set: SetRef::Component(i),
                expected: m,
                found: comp.len(),
            });
        }
        check_set(SetRef::Component(i), comp, &mut report);
    }
    report
}

/// Checks the per-splat invariants of a set outside any asset.
pub fn validate_set(set: &GaussianSet) -> Vec<Violation> {
    let mut report = Vec::new();
    check_set(SetRef::Standalone, set, &mut report);
    report
}

fn check_set(set: SetRef, gs: &GaussianSet, report: &mut Vec<Violation>) {
    for (splat, g) in gs.gaussians.iter().enumerate() {
        if g.to_array().iter().any(|v| !v.is_finite()) {
            report.push(Violation::NonFinite { set, splat });
            continue;
        }
        let norm = g.orientation_norm();
        if (norm - 1.0).abs() > UNIT_QUATERNION_TOLERANCE {
            report.push(Violation::NonUnitQuaternion { set, splat, norm });
        }
        if !(0.0..=1.0).contains(&g.opacity) {
            report.push(Violation::OpacityRange {
                set,
                splat,
                value: g.opacity,
            });
        }
        if let Some(&value) = g.color.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            report.push(Violation::ColorRange { set, splat, value });
        }
        if let Some(&value) = g.scale.iter().find(|s| **s <= 0.0) {
            report.push(Violation::NonPositiveScale { set, splat, value });
        }
    }
}

/// Flags weight vectors of the wrong length or with entries outside `[0, 1]`.
/// Animation itself accepts out-of-range weights.
pub fn validate_weights(weights: &BlendWeights, channels: usize) -> Vec<Violation> {
    let mut report = Vec::new();
    if weights.len() != channels {
        report.push(Violation::WeightCount {
            expected: channels,
            found: weights.len(),
        });
    }
    for (channel, &value) in weights.0.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            report.push(Violation::WeightRange { channel, value });
        }
    }
    report
}

/// Max and mean absolute difference of one field group.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DeltaStat {
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// Difference statistics of one component against the rest pose.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComponentDelta {
    pub channel: String,
    pub position: DeltaStat,
    pub scale: DeltaStat,
    pub orientation: DeltaStat,
    pub color: DeltaStat,
    pub opacity: DeltaStat,
    /// Splats whose 14 fields are all bit-identical to the rest pose.
    pub unchanged_splats: usize,
}

impl ComponentDelta {
    pub fn max_abs(&self) -> f64 {
        [
            self.position.max_abs,
            self.scale.max_abs,
            self.orientation.max_abs,
            self.color.max_abs,
            self.opacity.max_abs,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Per-component `θ_i − θ_rest` statistics. Components whose splat count
/// differs from the rest set are compared over the common prefix.
pub fn component_deltas(asset: &AvatarAsset) -> Vec<ComponentDelta> {
    const GROUPS: [(usize, usize); 5] = [(0, 3), (3, 6), (6, 10), (10, 13), (13, 14)];
    asset
        .components
        .iter()
        .enumerate()
        .map(|(i, comp)| {
            let mut max = [0.0f64; 5];
            let mut sum = [0.0f64; 5];
            let mut unchanged = 0;
            let n = comp.len().min(asset.rest.len());
            for (c, r) in comp.gaussians.iter().zip(&asset.rest.gaussians) {
                let (ca, ra) = (c.to_array(), r.to_array());
                for (g, &(lo, hi)) in GROUPS.iter().enumerate() {
                    for f in lo..hi {
                        let d = (ca[f] as f64 - ra[f] as f64).abs();
                        max[g] = max[g].max(d);
                        sum[g] += d;
                    }
                }
                if c.bit_eq(r) {
                    unchanged += 1;
                }
            }
            let stat = |g: usize| {
                let count = n * (GROUPS[g].1 - GROUPS[g].0);
                DeltaStat {
                    max_abs: max[g],
                    mean_abs: if count == 0 {
                        0.0
                    } else {
                        sum[g] / count as f64
                    },
                }
            };
            ComponentDelta {
                channel: asset.channel_names.get(i).cloned().unwrap_or_default(),
                position: stat(0),
                scale: stat(1),
                orientation: stat(2),
                color: stat(3),
                opacity: stat(4),
                unchanged_splats: unchanged,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use alloc::vec;

    fn small_asset(m: usize) -> AvatarAsset {
        let rest = GaussianSet::new(
            (0..m)
                .map(|i| {
                    Gaussian::new(
                        [i as f32 * 0.1, 0.0, 0.0],
                        [0.05, 0.05, 0.01],
                        [1.0, 0.0, 0.0, 0.0],
                        [0.2, 0.4, 0.6],
                        0.8,
                    )
                })
                .collect(),
        );
        AvatarAsset::from_rest(rest)
    }

    #[test]
    fn valid_asset_has_empty_report() {
        assert!(validate_asset(&small_asset(4)).is_empty());
    }

    #[test]
    fn short_component_is_one_count_mismatch() {
        let mut asset = small_asset(4);
        asset.components[3].gaussians.pop();
        let report = validate_asset(&asset);
        assert_eq!(
            report,
            vec![Violation::CountMismatch {
                set: SetRef::Component(3),
                expected: 4,
                found: 3
            }]
        );
    }

    #[test]
    fn opacity_out_of_range_names_the_splat() {
        let mut asset = small_asset(4);
        asset.rest.gaussians[2].opacity = 1.5;
        let report = validate_asset(&asset);
        assert_eq!(
            report,
            vec![Violation::OpacityRange {
                set: SetRef::Rest,
                splat: 2,
                value: 1.5
            }]
        );
    }

    #[test]
    fn wrong_channel_names_are_reported() {
        let mut asset = small_asset(1);
        asset.channel_names[13] = "MouthSmileRight".into();
        let report = validate_asset(&asset);
        assert!(matches!(
            report[..],
            [Violation::ChannelName { index: 13, .. }]
        ));
        assert!(validate_asset_with(&asset, Profile::Custom).is_empty());
    }

    #[test]
    fn non_unit_quaternion_and_bad_scale() {
        let mut asset = small_asset(2);
        asset.components[0].gaussians[1].orientation = [0.9, 0.0, 0.0, 0.0];
        asset.components[1].gaussians[0].scale[2] = 0.0;
        let report = validate_asset(&asset);
        assert_eq!(report.len(), 2);
        assert!(matches!(
            report[0],
            Violation::NonUnitQuaternion { splat: 1, .. }
        ));
        assert!(matches!(
            report[1],
            Violation::NonPositiveScale { splat: 0, .. }
        ));
    }

    #[test]
    fn weights_outside_unit_interval_are_flagged() {
        let mut w = BlendWeights::zeros(16);
        w.0[4] = 1.05;
        assert_eq!(
            validate_weights(&w, 16),
            vec![Violation::WeightRange {
                channel: 4,
                value: 1.05
            }]
        );
        assert_eq!(validate_weights(&BlendWeights::zeros(3), 16).len(), 1);
    }

    #[test]
    fn identical_components_have_zero_deltas() {
        let deltas = component_deltas(&small_asset(5));
        assert_eq!(deltas.len(), 16);
        for d in deltas {
            assert_eq!(d.max_abs(), 0.0);
            assert_eq!(d.unchanged_splats, 5);
        }
    }

    #[test]
    fn moved_splat_shows_in_position_delta() {
        let mut asset = small_asset(3);
        asset.components[6].gaussians[1].position[0] += 0.1;
        let d = &component_deltas(&asset)[6];
        assert!((d.position.max_abs - 0.1).abs() < 1e-6);
        assert_eq!(d.scale.max_abs, 0.0);
        assert_eq!(d.unchanged_splats, 2);
        assert_eq!(d.channel, "jawOpen");
    }
}
