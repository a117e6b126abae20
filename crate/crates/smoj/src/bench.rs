//! Blend + render throughput measurement over a grid of resolutions and
//! splat counts.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use smoj_core::animation::AnimationError;
use smoj_core::render::RenderError;
use smoj_core::{blend, AvatarAsset, BlendWeights, Camera, Executor, GaussianSet, RenderConfig};

use crate::synth::synthetic_head;

/// The one enforced desk-scale floor.
pub const GATED_CELL: (u32, usize) = (256, 10_000);
pub const FPS_FLOOR: f64 = 30.0;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("frames per cell must be at least 1")]
    NoFrames,
    #[error(transparent)]
    Blend(#[from] AnimationError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("camera: {0}")]
    Camera(#[from] smoj_core::camera::CameraError),
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Square image sizes.
    pub resolutions: Vec<u32>,
    pub counts: Vec<usize>,
    pub frames: usize,
    pub warmup: usize,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![256, 512],
            counts: vec![0, 10_000, 50_000],
            frames: 20,
            warmup: 2,
            seed: 0,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub width: u32,
    pub height: u32,
    pub splats: usize,
    pub frames: usize,
    pub blend_ms: f64,
    pub render_ms: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
    /// Whether this cell carries the FPS floor.
    pub gated: bool,
    /// False when a smaller resolution with the same splat count was slower.
    pub monotonic: bool,
}

impl BenchRow {
    pub fn meets_floor(&self) -> Option<bool> {
        self.gated.then_some(self.fps >= FPS_FLOOR)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

pub const CSV_HEADER: &str =
    "width,height,splats,frames,blend_ms,render_ms,mean_ms,p50_ms,p95_ms,fps,gated,monotonic";

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.2},{},{}",
                r.width,
                r.height,
                r.splats,
                r.frames,
                r.blend_ms,
                r.render_ms,
                r.mean_ms,
                r.p50_ms,
                r.p95_ms,
                r.fps,
                r.gated,
                r.monotonic
            )
            .unwrap();
        }
        out
    }

    /// `None` if the grid has no gated cell.
    pub fn floor_met(&self) -> Option<bool> {
        let gated: Vec<bool> = self.rows.iter().filter_map(BenchRow::meets_floor).collect();
        (!gated.is_empty()).then(|| gated.iter().all(|ok| *ok))
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// An asset with exactly `m` splats: `base` cycled (or truncated), or a
/// synthetic head if there is no base or it is empty.
pub fn resize_asset(base: Option<&AvatarAsset>, m: usize, seed: u64) -> AvatarAsset {
    match base {
        Some(a) if a.splat_count() > 0 => {
            let take = |s: &GaussianSet| {
                GaussianSet::new((0..m).map(|i| s.gaussians[i % s.len()]).collect())
            };
            AvatarAsset {
                rest: take(&a.rest),
                components: a.components.iter().map(take).collect(),
                channel_names: a.channel_names.clone(),
                metadata: a.metadata.clone(),
            }
        }
        _ => synthetic_head(m, seed),
    }
}

/// A frontal camera three units in front of the rest centroid.
pub fn frontal_camera(set: &GaussianSet, width: u32, height: u32) -> Result<Camera, BenchError> {
    let c = set.centroid().unwrap_or([0.0; 3]);
    Ok(Camera::look_at(
        [c[0], c[1], c[2] + 3.0],
        c,
        [0.0, 1.0, 0.0],
        width,
        height,
        40.0,
    )?)
}

/// Smoothly varying weights so every frame blends something different.
fn frame_weights(k: usize, frame: usize) -> BlendWeights {
    BlendWeights(
        (0..k)
            .map(|i| (0.5 + 0.5 * ((frame as f64) * 0.3 + i as f64).sin()) as f32)
            .collect(),
    )
}

pub fn run_cell<E: Executor>(
    exec: &E,
    asset: &AvatarAsset,
    size: u32,
    cfg: &BenchConfig,
) -> Result<BenchRow, BenchError> {
    if cfg.frames == 0 {
        return Err(BenchError::NoFrames);
    }
    let cam = frontal_camera(&asset.rest, size, size)?;
    let k = asset.channel_count();
    let mut totals = Vec::with_capacity(cfg.frames);
    let (mut blend_sum, mut render_sum) = (0.0, 0.0);
    for frame in 0..cfg.warmup + cfg.frames {
        let t0 = Instant::now();
        let posed = blend(asset, &frame_weights(k, frame))?;
        let t1 = Instant::now();
        let out = smoj_core::render_with(exec, &posed, &cam, &cfg.render)?;
        let t2 = Instant::now();
        std::hint::black_box(&out);
        if frame >= cfg.warmup {
            blend_sum += ms(t1 - t0);
            render_sum += ms(t2 - t1);
            totals.push(ms(t2 - t0));
        }
    }
    totals.sort_by(f64::total_cmp);
    let n = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / n;
    Ok(BenchRow {
        width: size,
        height: size,
        splats: asset.splat_count(),
        frames: cfg.frames,
        blend_ms: blend_sum / n,
        render_ms: render_sum / n,
        mean_ms: mean,
        p50_ms: percentile(&totals, 50.0),
        p95_ms: percentile(&totals, 95.0),
        fps: 1e3 / mean,
        gated: (size, asset.splat_count()) == GATED_CELL,
        monotonic: true,
    })
}

/// Runs every (resolution, count) cell, counts outer, resolutions inner.
pub fn run_bench<E: Executor>(
    exec: &E,
    base: Option<&AvatarAsset>,
    cfg: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    let mut resolutions = cfg.resolutions.clone();
    resolutions.sort_unstable();
    let mut rows = Vec::new();
    for &m in &cfg.counts {
        let asset = resize_asset(base, m, cfg.seed);
        let mut slowest = 0.0f64;
        for &size in &resolutions {
            let mut row = run_cell(exec, &asset, size, cfg)?;
            row.monotonic = row.mean_ms >= slowest;
            slowest = slowest.max(row.mean_ms);
            rows.push(row);
        }
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use smoj_core::Serial;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&[3.0], 0.0), 3.0);
    }

    #[test]
    fn table_schema_and_gating() {
        let cfg = BenchConfig {
            resolutions: vec![32, 16],
            counts: vec![0, 50],
            frames: 2,
            warmup: 0,
            ..BenchConfig::default()
        };
        let report = run_bench(&Serial, None, &cfg).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 12));
        assert_eq!(report.rows[0].width, 16);
        assert_eq!(report.floor_met(), None);
        assert!(report.rows.iter().all(|r| !r.gated && r.fps > 0.0));
    }

    #[test]
    fn resizing_cycles_the_base() {
        let base = synthetic_head(3, 0);
        let big = resize_asset(Some(&base), 7, 0);
        assert_eq!(big.splat_count(), 7);
        assert_eq!(big.rest.gaussians[4], base.rest.gaussians[1]);
        assert_eq!(
            big.components[5].gaussians[6],
            base.components[5].gaussians[0]
        );
        assert_eq!(resize_asset(Some(&base), 0, 0).splat_count(), 0);
    }
}
