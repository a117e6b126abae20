//! Image-space losses with analytic gradients.
//!
//! Every image loss is mean-reduced over its buffer's elements, so the loss
//! weights do not depend on resolution.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::camera::Camera;
use crate::math::{lit, Real};
use crate::render::{
    normals_from_depth_with, RayDistortionInput, RenderError, RenderGradients, RenderOutput,
};

/// Depth range of the normalized depth used by the distortion term of
/// [`total_3dgen_loss`].
pub const DIST_NEAR: f64 = 0.2;
pub const DIST_FAR: f64 = 100.0;

/// Maps camera depth to `[0, 1]` over `[DIST_NEAR, DIST_FAR]` like a
/// perspective depth buffer, `m(z) = f (z − n) / ((f − n) z)`. Returns
/// `(m, dm/dz)`.
pub fn normalized_depth<F: Real>(z: F) -> (F, F) {
    let (n, f): (F, F) = (lit(DIST_NEAR), lit(DIST_FAR));
    let k = f / (f - n);
    (k * (F::one() - n / z), k * n / (z * z))
}

/// Coverage above which a pixel takes part in the normal loss.
pub const NORMAL_MIN_ALPHA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("{name} has {found} values, expected {expected}")]
    Shape {
        name: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid loss weights: {0}")]
    Weights(&'static str),
    #[error("ray offsets must start at 0 and be nondecreasing")]
    RayOffsets,
    #[error("training progress must lie in [0, 1], got {0}")]
    Progress(f64),
    #[error(transparent)]
    Render(#[from] RenderError),
}

fn check_len(name: &'static str, found: usize, expected: usize) -> Result<(), LossError> {
    if found == expected {
        Ok(())
    } else {
        Err(LossError::Shape {
            name,
            expected,
            found,
        })
    }
}

/// Weights of the auxiliary terms of the full reconstruction loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lpips: f64,
    pub normal: f64,
    pub dist: f64,
    /// Training progress from which the normal and distortion terms apply.
    pub fraction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lpips: 0.0,
            normal: 0.05,
            dist: 100.0,
            fraction: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for w in [self.lpips, self.normal, self.dist] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(LossError::Weights("weights must be finite and nonnegative"));
            }
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(LossError::Weights("schedule fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Whether the normal and distortion terms are active. The boundary is
    /// inclusive.
    pub fn gate_open(&self, progress: f64) -> bool {
        progress >= self.fraction
    }
}

/// Photometric and mask loss with its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderLoss<F> {
    pub value: F,
    pub d_rgb: Vec<F>,
    pub d_alpha: Vec<F>,
}

fn mse_with_grad<F: Real>(x: &[F], y: &[F]) -> (F, Vec<F>) {
    if x.is_empty() {
        return (F::zero(), Vec::new());
    }
    let n: F = lit(x.len() as f64);
    let two: F = lit(2.0);
    let mut sum = F::zero();
    let grad = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a - b;
            sum = sum + d * d;
            two * d / n
        })
        .collect();
    (sum / n, grad)
}

/// `mean((rgb − gt_rgb)²) + mean((alpha − gt_mask)²)`, each mean over its
/// own buffer's elements. The gradient of each element is `2(x − y)/N`.
pub fn l_render<F: Real>(
    pred: &RenderOutput<F>,
    gt_rgb: &[F],
    gt_mask: &[F],
) -> Result<RenderLoss<F>, LossError> {
    check_len("target rgb", gt_rgb.len(), pred.rgb.len())?;
    check_len("target mask", gt_mask.len(), pred.alpha.len())?;
    let (rgb, d_rgb) = mse_with_grad(&pred.rgb, gt_rgb);
    let (alpha, d_alpha) = mse_with_grad(&pred.alpha, gt_mask);
    Ok(RenderLoss {
        value: rgb + alpha,
        d_rgb,
        d_alpha,
    })
}

/// A loss value with its gradient w.r.t. one input buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalLoss<F> {
    pub value: F,
    pub d_pred: Vec<F>,
    /// Number of pixels the mean was taken over.
    pub valid: usize,
}

/// Mean over `valid` pixels of `1 − n_pred·n_surf`, for unit (or zero)
/// normal maps laid out `3` values per pixel. With no valid pixel the loss
/// is defined as zero.
pub fn l_normal<F: Real>(
    n_pred: &[F],
    n_surf: &[F],
    valid: &[bool],
) -> Result<NormalLoss<F>, LossError> {
    check_len("predicted normals", n_pred.len(), 3 * valid.len())?;
    check_len("surface normals", n_surf.len(), 3 * valid.len())?;
    let count = valid.iter().filter(|v| **v).count();
    let mut d_pred = vec![F::zero(); n_pred.len()];
    if count == 0 {
        return Ok(NormalLoss {
            value: F::zero(),
            d_pred,
            valid: 0,
        });
    }
    let n: F = lit(count as f64);
    let mut sum = F::zero();
    for (p, _) in valid.iter().enumerate().filter(|(_, v)| **v) {
        let r = 3 * p..3 * p + 3;
        let dot = n_pred[r.clone()]
            .iter()
            .zip(&n_surf[r.clone()])
            .fold(F::zero(), |a, (x, y)| a + *x * *y);
        sum = sum + (F::one() - dot);
        for (g, s) in d_pred[r.clone()].iter_mut().zip(&n_surf[r]) {
            *g = -*s / n;
        }
    }
    Ok(NormalLoss {
        value: sum / n,
        d_pred,
        valid: count,
    })
}

/// [`l_normal`] on unnormalized predictions: `n_pred = raw / |raw|`, with
/// the gradient carried back through the normalization. Pixels whose raw
/// vector is zero are treated as invalid.
pub fn l_normal_raw<F: Real>(
    raw: &[F],
    n_surf: &[F],
    valid: &[bool],
) -> Result<NormalLoss<F>, LossError> {
    check_len("predicted normals", raw.len(), 3 * valid.len())?;
    let mut unit = vec![F::zero(); raw.len()];
    let mut norms = vec![F::zero(); valid.len()];
    let mut mask = valid.to_vec();
    for (p, m) in mask.iter_mut().enumerate() {
        let v = &raw[3 * p..3 * p + 3];
        let len = v.iter().fold(F::zero(), |a, x| a + *x * *x).sqrt();
        if !(len > F::zero()) {
            *m = false;
            continue;
        }
        norms[p] = len;
        for i in 0..3 {
            unit[3 * p + i] = v[i] / len;
        }
    }
    let mut loss = l_normal(&unit, n_surf, &mask)?;
    for (p, _) in mask.iter().enumerate().filter(|(_, v)| **v) {
        // d raw = (g − n (n·g)) / |raw|
        let r = 3 * p..3 * p + 3;
        let g = &loss.d_pred[r.clone()];
        let u = &unit[r.clone()];
        let proj = (0..3).fold(F::zero(), |a, i| a + u[i] * g[i]);
        let out: [F; 3] = core::array::from_fn(|i| (g[i] - u[i] * proj) / norms[p]);
        loss.d_pred[r].copy_from_slice(&out);
    }
    Ok(loss)
}

/// Depth distortion loss with gradients laid out like its input samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DistLoss<F> {
    pub value: F,
    pub d_weights: Vec<F>,
    pub d_depths: Vec<F>,
}

/// `Σ_{k,j} w_k w_j |d_k − d_j|` per ray, summed over ordered pairs (each
/// unordered pair counts twice), then averaged over rays. At ties the depth
/// subgradient uses sign 0. Zero rays give zero loss.
pub fn l_dist<F: Real>(rays: &RayDistortionInput<F>) -> Result<DistLoss<F>, LossError> {
    let samples = rays.offsets.last().copied().unwrap_or(0);
    check_len("ray weights", rays.weights.len(), samples)?;
    check_len("ray depths", rays.depths.len(), samples)?;
    if rays.offsets.windows(2).any(|w| w[1] < w[0]) || rays.offsets.first().is_some_and(|o| *o != 0)
    {
        return Err(LossError::RayOffsets);
    }
    let count = rays.ray_count();
    let mut d_weights = vec![F::zero(); samples];
    let mut d_depths = vec![F::zero(); samples];
    if count == 0 {
        return Ok(DistLoss {
            value: F::zero(),
            d_weights,
            d_depths,
        });
    }
    let two: F = lit(2.0);
    let scale = F::one() / lit::<F>(count as f64);
    let mut total = F::zero();
    for r in 0..count {
        let base = rays.offsets[r];
        let (w, d) = rays.ray(r);
        for k in 0..w.len() {
            // Σ_j w_j |d_k − d_j| and Σ_j w_j sign(d_k − d_j)
            let (mut dist, mut sign) = (F::zero(), F::zero());
            for j in 0..w.len() {
                let diff = d[k] - d[j];
                dist = dist + w[j] * diff.abs();
                if diff > F::zero() {
                    sign = sign + w[j];
                } else if diff < F::zero() {
                    sign = sign - w[j];
                }
            }
            total = total + w[k] * dist;
            d_weights[base + k] = two * dist * scale;
            d_depths[base + k] = two * w[k] * sign * scale;
        }
    }
    Ok(DistLoss {
        value: total * scale,
        d_weights,
        d_depths,
    })
}

/// Perceptual image distance supplied by the caller, e.g. a learned metric.
pub trait PerceptualMetric<F> {
    /// Distance between two `width × height` RGB images (3 values per
    /// pixel, row-major).
    fn distance(&self, pred: &[F], target: &[F], width: usize, height: usize) -> F;

    /// Gradient of [`Self::distance`] w.r.t. `pred`, if the metric provides
    /// one. Without it the term is reported but does not drive fitting.
    fn gradient(
        &self,
        _pred: &[F],
        _target: &[F],
        _width: usize,
        _height: usize,
    ) -> Option<Vec<F>> {
        None
    }
}

/// Value of the stylization supervision loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GdaLoss<F> {
    pub value: F,
    pub mse: F,
    /// `None` when no perceptual metric is registered.
    pub perceptual: Option<F>,
}

impl<F: fmt::Display> fmt::Display for GdaLoss<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "total {} mse {} ", self.value, self.mse)?;
        match &self.perceptual {
            Some(p) => write!(f, "perceptual {p}"),
            None => f.write_str("perceptual: disabled"),
        }
    }
}

/// Mean squared error of two RGB images plus the perceptual distance when
/// a metric is supplied.
pub fn l_gda<F: Real>(
    pred: &[F],
    target: &[F],
    width: usize,
    height: usize,
    perceptual: Option<&dyn PerceptualMetric<F>>,
) -> Result<GdaLoss<F>, LossError> {
    check_len("predicted image", pred.len(), 3 * width * height)?;
    check_len("target image", target.len(), 3 * width * height)?;
    let (mse, _) = mse_with_grad(pred, target);
    let p = perceptual.map(|m| m.distance(pred, target, width, height));
    Ok(GdaLoss {
        value: mse + p.unwrap_or(F::zero()),
        mse,
        perceptual: p,
    })
}

/// One term of [`TotalLoss`], before and after weighting and gating.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Term {
    pub raw: f64,
    pub weighted: f64,
}

/// Full reconstruction loss of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct TotalLoss<F> {
    pub total: f64,
    pub render: Term,
    pub lpips: Term,
    pub normal: Term,
    pub dist: Term,
    pub gate_open: bool,
    /// Gradient of `total` w.r.t. the rendered buffers and ray samples.
    pub gradients: RenderGradients<F>,
}

/// Supervision of one view.
#[derive(Clone, Copy, Debug)]
pub struct ViewTarget<'a, F> {
    pub rgb: &'a [F],
    pub mask: &'a [F],
}

/// `L_render + λ_lpips·L_lpips + gate·(λ_n·L_normal + λ_d·L_dist)` for one
/// rendered view, where the gate is 1 once `progress ≥ weights.fraction`.
///
/// The surface normals of the normal term are derived from the rendered
/// depth and treated as constants. Pixels count as valid for it when both
/// normals are nonzero and coverage is at least [`NORMAL_MIN_ALPHA`]. The
/// distortion term is [`l_dist`] over [`normalized_depth`]s and needs
/// `rays`; without them it is zero.
pub fn total_3dgen_loss<F: Real>(
    pred: &RenderOutput<F>,
    rays: Option<&RayDistortionInput<F>>,
    cam: &Camera,
    target: ViewTarget<'_, F>,
    weights: &LossWeights,
    progress: f64,
    perceptual: Option<&dyn PerceptualMetric<F>>,
) -> Result<TotalLoss<F>, LossError> {
    weights.validate()?;
    if !(0.0..=1.0).contains(&progress) {
        return Err(LossError::Progress(progress));
    }
    let f64_of = |v: F| v.to_f64().unwrap_or(f64::NAN);
    let render = l_render(pred, target.rgb, target.mask)?;
    let mut grads = RenderGradients {
        rgb: render.d_rgb,
        alpha: render.d_alpha,
        ..RenderGradients::default()
    };
    let render_term = Term {
        raw: f64_of(render.value),
        weighted: f64_of(render.value),
    };

    let (w, h) = (pred.width, pred.height);
    let mut lpips = Term::default();
    if let Some(m) = perceptual {
        let raw = f64_of(m.distance(&pred.rgb, target.rgb, w, h));
        lpips = Term {
            raw,
            weighted: weights.lpips * raw,
        };
        if weights.lpips > 0.0 {
            if let Some(g) = m.gradient(&pred.rgb, target.rgb, w, h) {
                check_len("perceptual gradient", g.len(), grads.rgb.len())?;
                let s: F = lit(weights.lpips);
                for (a, b) in grads.rgb.iter_mut().zip(g) {
                    *a = *a + s * b;
                }
            }
        }
    }

    let gate_open = weights.gate_open(progress);
    let mut normal = Term::default();
    let mut dist = Term::default();
    if gate_open {
        let surf = normals_from_depth_with(&pred.depth, &pred.alpha, lit(NORMAL_MIN_ALPHA), cam)?;
        let nonzero = |v: &[F]| v.iter().any(|x| *x != F::zero());
        let valid: Vec<bool> = (0..w * h)
            .map(|p| {
                pred.alpha[p] >= lit(NORMAL_MIN_ALPHA)
                    && nonzero(&surf[3 * p..3 * p + 3])
                    && nonzero(&pred.normal[3 * p..3 * p + 3])
            })
            .collect();
        let n = l_normal(&pred.normal, &surf, &valid)?;
        normal = Term {
            raw: f64_of(n.value),
            weighted: weights.normal * f64_of(n.value),
        };
        let s: F = lit(weights.normal);
        grads.normal = n.d_pred.into_iter().map(|g| g * s).collect();

        if let Some(rays) = rays {
            let mapped: Vec<(F, F)> = rays.depths.iter().map(|z| normalized_depth(*z)).collect();
            let normalized = RayDistortionInput {
                offsets: rays.offsets.clone(),
                weights: rays.weights.clone(),
                depths: mapped.iter().map(|m| m.0).collect(),
            };
            let mut d = l_dist(&normalized)?;
            for (g, m) in d.d_depths.iter_mut().zip(&mapped) {
                *g = *g * m.1;
            }
            dist = Term {
                raw: f64_of(d.value),
                weighted: weights.dist * f64_of(d.value),
            };
            let s: F = lit(weights.dist);
            grads.ray_offsets = rays.offsets.clone();
            grads.ray_weights = d.d_weights.into_iter().map(|g| g * s).collect();
            grads.ray_depths = d.d_depths.into_iter().map(|g| g * s).collect();
        }
    }
    let base = render_term.weighted + lpips.weighted;
    let total = if gate_open {
        base + normal.weighted + dist.weighted
    } else {
        base
    };
    Ok(TotalLoss {
        total,
        render: render_term,
        lpips,
        normal,
        dist,
        gate_open,
        gradients: grads,
    })
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`; infinite for
/// identical inputs.
pub fn psnr<F: Real>(pred: &[F], target: &[F]) -> Result<f64, LossError> {
    check_len("target", target.len(), pred.len())?;
    if pred.is_empty() {
        return Ok(f64::INFINITY);
    }
    let sum = pred.iter().zip(target).fold(0.0f64, |a, (x, y)| {
        let d = x.to_f64().unwrap_or(f64::NAN) - y.to_f64().unwrap_or(f64::NAN);
        a + d * d
    });
    let mse = sum / pred.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * num_traits::Float::log10(mse)
    })
}
