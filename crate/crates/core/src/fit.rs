//! Multi-view fitting of a Gaussian set to target renders.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::asset::{validate_set, Violation};
use crate::camera::Camera;
use crate::exec::Executor;
use crate::gaussian::{GaussianSet, Splat};
use crate::loss::{psnr, total_3dgen_loss, LossError, LossWeights, PerceptualMetric, ViewTarget};
use crate::render::{backprop_render_with, render_splats, RenderConfig, RenderError, RenderOutput};
use crate::Serial;

/// Parameter groups, as index ranges of [`Splat::param`].
const POSITION: core::ops::Range<usize> = 0..3;
const SCALE: core::ops::Range<usize> = 3..6;
const ROTATION: core::ops::Range<usize> = 6..10;
const COLOR: core::ops::Range<usize> = 10..13;
const OPACITY: usize = 13;

/// Per-group Adam step sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
    pub opacity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            scale: 5e-3,
            rotation: 1e-3,
            color: 2.5e-3,
            opacity: 5e-2,
        }
    }
}

impl LearningRates {
    pub const fn zero() -> Self {
        Self {
            position: 0.0,
            scale: 0.0,
            rotation: 0.0,
            color: 0.0,
            opacity: 0.0,
        }
    }

    fn all(&self) -> [f64; 5] {
        [
            self.position,
            self.scale,
            self.rotation,
            self.color,
            self.opacity,
        ]
    }
}

/// Shared perceptual metric usable from worker threads.
pub type SharedMetric = Arc<dyn PerceptualMetric<f32> + Send + Sync>;

#[derive(Clone)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    /// The position step size decays exponentially to `lr.position ·
    /// position_lr_final` over the run.
    pub position_lr_final: f64,
    /// Multiplies the position step size. `None` uses the radius of the
    /// camera rig, so that steps scale with the scene.
    pub position_lr_scale: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Lower bound for scale components after each step.
    pub min_scale: f64,
    /// Views rendered per step; `None` or a value ≥ the view count uses all
    /// of them. Subsets are drawn from `seed`.
    pub views_per_step: Option<usize>,
    pub seed: u64,
    pub render: RenderConfig,
    pub weights: LossWeights,
    pub perceptual: Option<SharedMetric>,
}

impl fmt::Debug for FitConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FitConfig")
            .field("iterations", &self.iterations)
            .field("lr", &self.lr)
            .field("position_lr_final", &self.position_lr_final)
            .field("position_lr_scale", &self.position_lr_scale)
            .field("beta1", &self.beta1)
            .field("beta2", &self.beta2)
            .field("epsilon", &self.epsilon)
            .field("min_scale", &self.min_scale)
            .field("views_per_step", &self.views_per_step)
            .field("seed", &self.seed)
            .field("render", &self.render)
            .field("weights", &self.weights)
            .field("perceptual", &self.perceptual.is_some())
            .finish()
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: LearningRates::default(),
            position_lr_final: 0.01,
            position_lr_scale: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
            min_scale: 1e-4,
            views_per_step: None,
            seed: 0,
            render: RenderConfig::default(),
            weights: LossWeights::default(),
            perceptual: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.iterations == 0 {
            return Err(FitError::Config("iterations must be at least 1"));
        }
        // Zero step sizes are allowed and freeze their group.
        if !self.lr.all().iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(FitError::Config(
                "learning rates must be finite and nonnegative",
            ));
        }
        if !(self.position_lr_final > 0.0 && self.position_lr_final.is_finite()) {
            return Err(FitError::Config(
                "final position learning-rate factor must be positive",
            ));
        }
        if let Some(s) = self.position_lr_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(FitError::Config(
                    "position learning-rate scale must be positive",
                ));
            }
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(FitError::Config("moment coefficients must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.min_scale > 0.0) {
            return Err(FitError::Config(
                "epsilon and minimum scale must be positive",
            ));
        }
        if self.views_per_step == Some(0) {
            return Err(FitError::Config("at least one view per step is required"));
        }
        self.render.validate()?;
        self.weights.validate()?;
        Ok(())
    }
}

/// One supervised view.
#[derive(Clone, Debug, PartialEq)]
pub struct FitView {
    pub camera: Camera,
    /// `H·W·3` target colors.
    pub rgb: Vec<f32>,
    /// `H·W` target coverage.
    pub mask: Vec<f32>,
}

impl FitView {
    /// Uses a render's color and coverage as the target.
    pub fn from_render(camera: Camera, out: &RenderOutput) -> Self {
        Self {
            camera,
            rgb: out.rgb.clone(),
            mask: out.alpha.clone(),
        }
    }
}

/// View-averaged loss of one iteration, evaluated before its step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitRecord {
    pub iteration: usize,
    pub total: f64,
    pub render: f64,
    pub normal: f64,
    pub dist: f64,
}

impl fmt::Display for FitRecord {
    /// `iter,total,render,normal,dist`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{:e},{:e},{:e},{:e}",
            self.iteration, self.total, self.render, self.normal, self.dist
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub set: GaussianSet,
    pub history: Vec<FitRecord>,
    /// PSNR of the final set's color against each view's target.
    pub final_psnr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("no target views")]
    NoViews,
    #[error("invalid fit config: {0}")]
    Config(&'static str),
    #[error("initial set is invalid: {}", .0.first().map(|v| alloc::format!("{v}")).unwrap_or_default())]
    InvalidInit(Vec<Violation>),
    #[error("view {view}: {source}")]
    View { view: usize, source: LossError },
    #[error("loss diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        history: Vec<FitRecord>,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

pub fn fit(views: &[FitView], init: &GaussianSet, cfg: &FitConfig) -> Result<FitResult, FitError> {
    fit_with(&Serial, views, init, cfg)
}

/// Adam on every splat parameter against the full reconstruction loss,
/// averaged over views. Views are evaluated through `exec` and reduced in
/// view order, so the result is bit-identical for any executor.
///
/// After each step, quaternions are renormalized, opacity and color are
/// clamped to `[0, 1]` and scales are floored at `cfg.min_scale`; a group
/// whose learning rate is zero is left untouched.
pub fn fit_with<E: Executor>(
    exec: &E,
    views: &[FitView],
    init: &GaussianSet,
    cfg: &FitConfig,
) -> Result<FitResult, FitError> {
    if views.is_empty() {
        return Err(FitError::NoViews);
    }
    cfg.validate()?;
    let report = validate_set(init);
    if !report.is_empty() {
        return Err(FitError::InvalidInit(report));
    }
    for (view, v) in views.iter().enumerate() {
        v.camera.validate().map_err(RenderError::from)?;
        let n = v.camera.pixel_count();
        if v.rgb.len() != 3 * n || v.mask.len() != n {
            return Err(FitError::View {
                view,
                source: LossError::Shape {
                    name: "target",
                    expected: 3 * n,
                    found: v.rgb.len(),
                },
            });
        }
    }

    let mut splats = init.to_splats::<f32>();
    let mut adam = Adam::new(splats.len(), cfg, rig_radius(views));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let progress = it as f64 / cfg.iterations as f64;
        let chosen: Vec<usize> = match cfg.views_per_step {
            Some(k) if k < views.len() => {
                let mut idx = sample(&mut rng, views.len(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..views.len()).collect(),
        };
        let (record, grads) = evaluate(exec, views, &chosen, &splats, cfg, progress, it)?;
        history.push(record);
        if !record.total.is_finite()
            || grads
                .iter()
                .any(|g| !(0..14).all(|i| g.param(i).is_finite()))
        {
            return Err(FitError::Diverged {
                iteration: it,
                history,
            });
        }
        adam.step(&mut splats, &grads, it);
    }

    let final_psnr = views
        .iter()
        .map(|v| {
            let (out, _) = render_splats(&Serial, &splats, &v.camera, &cfg.render, false)?;
            Ok(psnr(&out.rgb, &v.rgb)?)
        })
        .collect::<Result<Vec<f64>, FitError>>()?;
    Ok(FitResult {
        set: GaussianSet::from_splats(&splats),
        history,
        final_psnr,
    })
}

/// Largest distance of a camera center from the centroid of all centers,
/// or 1 for a single view.
fn rig_radius(views: &[FitView]) -> f64 {
    let centers: Vec<[f64; 3]> = views.iter().map(|v| v.camera.center()).collect();
    let n = centers.len() as f64;
    let mean: [f64; 3] = core::array::from_fn(|i| centers.iter().map(|c| c[i]).sum::<f64>() / n);
    let r = centers
        .iter()
        .map(|c| {
            Float::sqrt(
                (0..3)
                    .map(|i| (c[i] - mean[i]) * (c[i] - mean[i]))
                    .sum::<f64>(),
            )
        })
        .fold(0.0, f64::max);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Loss record and summed parameter gradients over `chosen` views, both
/// divided by the number of views.
fn evaluate<E: Executor>(
    exec: &E,
    views: &[FitView],
    chosen: &[usize],
    splats: &[Splat<f32>],
    cfg: &FitConfig,
    progress: f64,
    iteration: usize,
) -> Result<(FitRecord, Vec<Splat<f32>>), FitError> {
    let need_rays = cfg.weights.gate_open(progress) && cfg.weights.dist > 0.0;
    let per_view = exec.map_indexed(chosen.len(), |k| {
        let view = chosen[k];
        let v = &views[view];
        let wrap = |source: LossError| FitError::View { view, source };
        let (out, rays) = render_splats(&Serial, splats, &v.camera, &cfg.render, need_rays)?;
        let target = ViewTarget {
            rgb: &v.rgb,
            mask: &v.mask,
        };
        let metric = cfg
            .perceptual
            .as_deref()
            .map(|m| m as &dyn PerceptualMetric<f32>);
        let loss = total_3dgen_loss(
            &out,
            rays.as_ref(),
            &v.camera,
            target,
            &cfg.weights,
            progress,
            metric,
        )
        .map_err(wrap)?;
        let grads = backprop_render_with(&Serial, splats, &v.camera, &cfg.render, &loss.gradients)?;
        Ok::<_, FitError>((loss, grads))
    });
    let inv = 1.0 / chosen.len() as f64;
    let mut record = FitRecord {
        iteration,
        total: 0.0,
        render: 0.0,
        normal: 0.0,
        dist: 0.0,
    };
    let mut sum = vec![Splat::<f32>::zero(); splats.len()];
    for result in per_view {
        let (loss, grads) = result?;
        record.total += loss.total * inv;
        record.render += loss.render.weighted * inv;
        record.normal += loss.normal.weighted * inv;
        record.dist += loss.dist.weighted * inv;
        for (s, g) in sum.iter_mut().zip(&grads) {
            s.add_assign(g);
        }
    }
    let scale = inv as f32;
    for s in &mut sum {
        for i in 0..14 {
            *s.param_mut(i) = s.param(i) * scale;
        }
    }
    Ok((record, sum))
}

struct Adam {
    m: Vec<[f64; 14]>,
    v: Vec<[f64; 14]>,
    /// Step size per parameter slot.
    lr: [f64; 14],
    position_lr: f64,
    position_decay: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    min_scale: f64,
    iterations: usize,
}

impl Adam {
    fn new(n: usize, cfg: &FitConfig, rig_radius: f64) -> Self {
        let mut lr = [0.0; 14];
        let position_lr = cfg.lr.position * cfg.position_lr_scale.unwrap_or(rig_radius);
        for (range, value) in [
            (POSITION, position_lr),
            (SCALE, cfg.lr.scale),
            (ROTATION, cfg.lr.rotation),
            (COLOR, cfg.lr.color),
            (OPACITY..OPACITY + 1, cfg.lr.opacity),
        ] {
            lr[range].fill(value);
        }
        Self {
            m: vec![[0.0; 14]; n],
            v: vec![[0.0; 14]; n],
            lr,
            position_lr,
            position_decay: cfg.position_lr_final,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            min_scale: cfg.min_scale,
            iterations: cfg.iterations,
        }
    }

    fn step(&mut self, splats: &mut [Splat<f32>], grads: &[Splat<f32>], it: usize) {
        let t = (it + 1) as i32;
        let bias1 = 1.0 - Float::powi(self.beta1, t);
        let bias2 = 1.0 - Float::powi(self.beta2, t);
        let frac = if self.iterations > 1 {
            it as f64 / (self.iterations - 1) as f64
        } else {
            0.0
        };
        let mut lr = self.lr;
        lr[POSITION].fill(self.position_lr * Float::powf(self.position_decay, frac));
        for (k, (s, g)) in splats.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..14 {
                if lr[i] == 0.0 {
                    continue;
                }
                let gi = g.param(i) as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = lr[i] * (m[i] / bias1) / (Float::sqrt(v[i] / bias2) + self.epsilon);
                *s.param_mut(i) = (s.param(i) as f64 - update) as f32;
            }
            self.project(s, &lr);
        }
    }

    fn project(&self, s: &mut Splat<f32>, lr: &[f64; 14]) {
        if lr[SCALE.start] > 0.0 {
            let floor = self.min_scale as f32;
            s.scale = s.scale.map(|v| if v > floor { v } else { floor });
        }
        if lr[ROTATION.start] > 0.0 {
            let n = Float::sqrt(
                s.rotation
                    .iter()
                    .map(|v| (*v as f64) * (*v as f64))
                    .sum::<f64>(),
            );
            s.rotation = if n > 0.0 && n.is_finite() {
                s.rotation.map(|v| (v as f64 / n) as f32)
            } else {
                [1.0, 0.0, 0.0, 0.0]
            };
        }
        if lr[COLOR.start] > 0.0 {
            s.color = s.color.map(|v| v.clamp(0.0, 1.0));
        }
        if lr[OPACITY] > 0.0 {
            s.opacity = s.opacity.clamp(0.0, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use crate::render::render;

    fn scene() -> (GaussianSet, Vec<FitView>) {
        let set = GaussianSet::new(vec![
            Gaussian::new(
                [0.0, 0.0, 0.0],
                [0.3, 0.2, 0.25],
                [1.0, 0.0, 0.0, 0.0],
                [0.8, 0.3, 0.2],
                0.8,
            ),
            Gaussian::new(
                [0.3, 0.1, 0.2],
                [0.2, 0.2, 0.2],
                [1.0, 0.0, 0.0, 0.0],
                [0.1, 0.6, 0.9],
                0.6,
            ),
        ]);
        let views = [[0.0, 0.0, 3.0], [3.0, 0.0, 0.0]]
            .iter()
            .map(|&eye| {
                let cam = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], 24, 24, 40.0).unwrap();
                let out = render(&set, &cam, &RenderConfig::default()).unwrap();
                FitView::from_render(cam, &out)
            })
            .collect();
        (set, views)
    }

    #[test]
    fn zero_learning_rates_return_init() {
        let (set, views) = scene();
        let cfg = FitConfig {
            iterations: 3,
            lr: LearningRates::zero(),
            ..FitConfig::default()
        };
        let out = fit(&views, &set, &cfg).unwrap();
        assert!(out.set.bit_eq(&set));
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn rejects_bad_config_and_inputs() {
        let (set, views) = scene();
        let zero_iters = FitConfig {
            iterations: 0,
            ..FitConfig::default()
        };
        assert!(matches!(
            fit(&views, &set, &zero_iters),
            Err(FitError::Config(_))
        ));
        assert!(matches!(
            fit(&[], &set, &FitConfig::default()),
            Err(FitError::NoViews)
        ));
        let mut bad = set.clone();
        bad.gaussians[0].opacity = 2.0;
        assert!(matches!(
            fit(&views, &bad, &FitConfig::default()),
            Err(FitError::InvalidInit(_))
        ));
    }

    #[test]
    fn record_formats_as_csv() {
        let r = FitRecord {
            iteration: 3,
            total: 0.5,
            render: 0.25,
            normal: 0.125,
            dist: 0.125,
        };
        assert_eq!(alloc::format!("{r}"), "3,5e-1,2.5e-1,1.25e-1,1.25e-1");
    }
}
