use alloc::vec;
use alloc::vec::Vec;

use crate::camera::Camera;
use crate::exec::Executor;
use crate::gaussian::Splat;
use crate::math::{lit, Real, Vec3};

use super::project::{falloff, project, splat_backward, CameraF, Footprint, Projected, SplatAccum};
use super::{
    RayDistortionInput, RenderConfig, RenderMode, RenderOutput, FALLOFF_CUTOFF_SQ, MIN_COVERAGE,
};

/// Upper bound on the squared length of a normal numerator treated as zero.
const NORMAL_EPS_SQ: f64 = 1e-24;

pub(super) struct Frame<'a, F> {
    splats: &'a [Splat<F>],
    cam: CameraF<F>,
    cfg: RenderConfig,
    /// Visible splats sorted by (center depth, index).
    projected: Vec<Projected<F>>,
    tiles_x: usize,
    tiles_y: usize,
    /// Tile `t` holds `items[offsets[t]..offsets[t + 1]]`, indices into
    /// `projected` in depth order.
    offsets: Vec<usize>,
    items: Vec<u32>,
}

/// Composited values of one pixel.
struct Pixel<F> {
    rgb: [F; 3],
    alpha: F,
    depth: F,
    normal: Vec3<F>,
    /// Number of contributors.
    count: usize,
}

/// Running front-to-back sums of one pixel.
struct Composite<F> {
    rgb: [F; 3],
    depth_num: F,
    normal_num: Vec3<F>,
    trans: F,
    /// Blend weight of the most recent contributor.
    last_weight: F,
    count: usize,
}

impl<F: Real> Composite<F> {
    fn new() -> Self {
        Self {
            rgb: [F::zero(); 3],
            depth_num: F::zero(),
            normal_num: [F::zero(); 3],
            trans: F::one(),
            last_weight: F::zero(),
            count: 0,
        }
    }

    #[inline(always)]
    fn push(&mut self, alpha: F, depth: F, color: &[F; 3], normal: Option<&Vec3<F>>) {
        let w = alpha * self.trans;
        for i in 0..3 {
            self.rgb[i] = self.rgb[i] + w * color[i];
        }
        if let Some(n) = normal {
            for i in 0..3 {
                self.normal_num[i] = self.normal_num[i] + w * n[i];
            }
        }
        self.depth_num = self.depth_num + w * depth;
        self.trans = self.trans * (F::one() - alpha);
        self.last_weight = w;
        self.count += 1;
    }
}

/// Screen-space ellipse of one splat, copied contiguously per tile.
#[derive(Clone, Copy)]
struct Packed<F> {
    mean: [F; 2],
    /// `[a, 2b, c]` of the conic.
    conic: [F; 3],
    opacity: F,
    color: [F; 3],
    depth: F,
}

impl<F: Real> Packed<F> {
    fn new(p: &Projected<F>) -> Option<Self> {
        let Footprint::Ellipse { mean, conic } = p.footprint else {
            return None;
        };
        Some(Self {
            mean,
            conic: [conic[0], lit::<F>(2.0) * conic[1], conic[2]],
            opacity: p.opacity,
            color: p.color,
            depth: p.depth,
        })
    }

    /// Pixel-center x range on row `py` that can fall inside the cutoff,
    /// widened slightly so that the exact test alone decides membership.
    #[inline]
    fn row_span(&self, py: F) -> Option<(F, F)> {
        let [a, b2, c] = self.conic;
        let dy = py - self.mean[1];
        let half_b = lit::<F>(0.5) * b2 * dy;
        // a·dx² + 2·half_b·dx + (c·dy² − cut) < 0
        let disc = half_b * half_b - a * (c * dy * dy - lit::<F>(FALLOFF_CUTOFF_SQ));
        if !(disc >= F::zero()) {
            return None;
        }
        let root = disc.sqrt();
        let center = self.mean[0] - half_b / a;
        let reach = root / a;
        let slack = lit::<F>(1e-3) + (center.abs() + reach) * lit::<F>(1e-4);
        Some((center - reach - slack, center + reach + slack))
    }
}

/// One contributor recorded during compositing.
#[derive(Clone, Copy)]
struct Contribution<F> {
    /// Position in the list being composited.
    slot: usize,
    alpha: F,
    transmittance: F,
    depth: F,
}

/// Whether the ellipse `dᵀ·conic·d < cutoff` may contain a pixel center of
/// `rect = [x0, y0, x1, y1)`. Conservative by a relative margin of 1e-4.
fn ellipse_reaches<F: Real>(mean: [F; 2], conic: [F; 3], rect: [usize; 4]) -> bool {
    let m = [
        mean[0].to_f64().unwrap_or(0.0),
        mean[1].to_f64().unwrap_or(0.0),
    ];
    let [a, b, c] = conic.map(|v| v.to_f64().unwrap_or(0.0));
    let lo = [rect[0] as f64 + 0.5 - m[0], rect[1] as f64 + 0.5 - m[1]];
    let hi = [rect[2] as f64 - 0.5 - m[0], rect[3] as f64 - 0.5 - m[1]];
    if !(lo.iter().chain(&hi).all(|v| v.is_finite()) && a > 0.0 && c > 0.0) {
        return true;
    }
    if lo[0] <= 0.0 && hi[0] >= 0.0 && lo[1] <= 0.0 && hi[1] >= 0.0 {
        return true;
    }
    // Off-center, the minimum over the rectangle lies on its boundary; on
    // each edge the quadratic is minimized at a clamped stationary point.
    let q = |dx: f64, dy: f64| a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    let mut best = f64::INFINITY;
    for dx in [lo[0], hi[0]] {
        let dy = (-b * dx / c).clamp(lo[1], hi[1]);
        best = best.min(q(dx, dy));
    }
    for dy in [lo[1], hi[1]] {
        let dx = (-b * dy / a).clamp(lo[0], hi[0]);
        best = best.min(q(dx, dy));
    }
    best < FALLOFF_CUTOFF_SQ * (1.0 + 1e-4)
}

/// Upstream gradients w.r.t. the rendered buffers; empty slices mean zero.
pub(super) struct Upstream<'a, F> {
    pub rgb: &'a [F],
    pub alpha: &'a [F],
    pub depth: &'a [F],
    pub normal: &'a [F],
    /// Per-sample gradients laid out like [`RayDistortionInput`].
    pub ray_offsets: &'a [usize],
    pub ray_weights: &'a [F],
    pub ray_depths: &'a [F],
}

struct TileBlock<F> {
    rgb: Vec<F>,
    alpha: Vec<F>,
    depth: Vec<F>,
    normal: Vec<F>,
    ray_counts: Vec<usize>,
    rays: Vec<(F, F)>,
}

impl<'a, F: Real> Frame<'a, F> {
    pub fn prepare(splats: &'a [Splat<F>], cam: &Camera, cfg: &RenderConfig) -> Self {
        let camf = CameraF::new(cam);
        let near = lit::<F>(cfg.near as f64);
        let unsorted: Vec<Projected<F>> = splats
            .iter()
            .enumerate()
            .filter_map(|(i, s)| project(i, s, &camf, cfg.mode, near))
            .collect();
        // `unsorted` is in index order, so its position breaks depth ties.
        // Sorting small keys is much cheaper than moving whole records.
        let mut keys: Vec<(F, usize)> = unsorted
            .iter()
            .enumerate()
            .map(|(k, p)| (p.depth, k))
            .collect();
        keys.sort_unstable_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let projected: Vec<Projected<F>> = keys.iter().map(|&(_, k)| unsorted[k]).collect();
        let ts = cfg.tile_size as usize;
        let tiles_x = camf.width.div_ceil(ts);
        let tiles_y = camf.height.div_ceil(ts);
        let n_tiles = tiles_x * tiles_y;
        let tile_span = |p: &Projected<F>| {
            let [x0, y0, x1, y1] = p.bbox;
            (x0 / ts, y0 / ts, (x1 - 1) / ts, (y1 - 1) / ts)
        };
        let hits = |p: &Projected<F>, tx: usize, ty: usize| match p.footprint {
            Footprint::Ellipse { mean, conic } => {
                let x0 = tx * ts;
                let y0 = ty * ts;
                let rect = [
                    x0,
                    y0,
                    (x0 + ts).min(camf.width),
                    (y0 + ts).min(camf.height),
                ];
                ellipse_reaches(mean, conic, rect)
            }
            Footprint::Disk { .. } => true,
        };
        let mut counts = vec![0usize; n_tiles + 1];
        for p in &projected {
            let (tx0, ty0, tx1, ty1) = tile_span(p);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    if hits(p, tx, ty) {
                        counts[ty * tiles_x + tx + 1] += 1;
                    }
                }
            }
        }
        for t in 0..n_tiles {
            counts[t + 1] += counts[t];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut items = vec![0u32; offsets[n_tiles]];
        for (k, p) in projected.iter().enumerate() {
            let (tx0, ty0, tx1, ty1) = tile_span(p);
            for ty in ty0..=ty1 {
                for tx in (tx0..=tx1).filter(|&tx| hits(p, tx, ty)) {
                    let t = ty * tiles_x + tx;
                    items[cursor[t]] = k as u32;
                    cursor[t] += 1;
                }
            }
        }
        Self {
            splats,
            cam: camf,
            cfg: *cfg,
            projected,
            tiles_x,
            tiles_y,
            offsets,
            items,
        }
    }

    fn tile_rect(&self, t: usize) -> [usize; 4] {
        let ts = self.cfg.tile_size as usize;
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let x0 = tx * ts;
        let y0 = ty * ts;
        [
            x0,
            y0,
            (x0 + ts).min(self.cam.width),
            (y0 + ts).min(self.cam.height),
        ]
    }

    fn tile_items(&self, t: usize) -> &[u32] {
        &self.items[self.offsets[t]..self.offsets[t + 1]]
    }

    fn pixel_center(x: usize, y: usize) -> (F, F) {
        (lit::<F>(x as f64 + 0.5), lit::<F>(y as f64 + 0.5))
    }

    /// Front-to-back compositing of `list` at pixel `(x, y)`.
    ///
    /// `contrib` receives every contributor; `tiled` enables the bounding-box
    /// test and early termination.
    fn composite<'p>(
        &self,
        list: impl Iterator<Item = &'p Projected<F>>,
        x: usize,
        y: usize,
        tiled: bool,
        contrib: &mut Vec<Contribution<F>>,
    ) where
        F: 'p,
    {
        contrib.clear();
        let (px, py) = Self::pixel_center(x, y);
        let ray = self.cam.ray(px, py);
        let stop = match (tiled, self.cfg.termination) {
            (true, Some(t)) => lit::<F>(t as f64),
            _ => F::zero(),
        };
        let mut trans = F::one();
        for (slot, p) in list.enumerate() {
            if tiled && !p.contains(x, y) {
                continue;
            }
            let Some(s) = p.eval(px, py, &ray) else {
                continue;
            };
            let alpha = p.opacity * s.g;
            contrib.push(Contribution {
                slot,
                alpha,
                transmittance: trans,
                depth: s.depth,
            });
            trans = trans * (F::one() - alpha);
            if trans < stop {
                break;
            }
        }
    }

    fn resolve<'p>(
        &self,
        lookup: impl Fn(usize) -> &'p Projected<F>,
        contrib: &[Contribution<F>],
    ) -> Pixel<F>
    where
        F: 'p,
    {
        let mut acc = Composite::new();
        for c in contrib {
            let p = lookup(c.slot);
            acc.push(c.alpha, c.depth, &p.color, Some(&p.normal));
        }
        self.finish(acc)
    }

    fn finish(&self, acc: Composite<F>) -> Pixel<F> {
        let Composite {
            mut rgb,
            depth_num,
            normal_num,
            trans,
            count,
            ..
        } = acc;
        // Σ wₖ telescopes to 1 − T; this form stays within [0, 1] under
        // rounding.
        let alpha = F::one() - trans;
        let bg = self.cfg.background;
        for i in 0..3 {
            rgb[i] = rgb[i] + (F::one() - alpha) * lit::<F>(bg[i] as f64);
        }
        let covered = alpha >= lit::<F>(MIN_COVERAGE);
        let depth = if covered {
            depth_num / alpha
        } else {
            F::zero()
        };
        let mut normal = [F::zero(); 3];
        let len_sq = normal_num.iter().fold(F::zero(), |a, v| a + *v * *v);
        if covered && self.cfg.mode == RenderMode::Surfel && len_sq > lit::<F>(NORMAL_EPS_SQ) {
            let inv = F::one() / len_sq.sqrt();
            normal = normal_num.map(|v| v * inv);
        }
        Pixel {
            rgb,
            alpha,
            depth,
            normal,
            count,
        }
    }

    fn render_tile(&self, t: usize, capture: bool) -> TileBlock<F> {
        let [x0, y0, x1, y1] = self.tile_rect(t);
        let n = (x1 - x0) * (y1 - y0);
        let mut block = TileBlock {
            rgb: Vec::with_capacity(3 * n),
            alpha: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            normal: Vec::with_capacity(3 * n),
            ray_counts: Vec::new(),
            rays: Vec::new(),
        };
        let items = self.tile_items(t);
        let stop = self
            .cfg
            .termination
            .map_or(F::zero(), |t| lit::<F>(t as f64));
        let packed: Vec<Packed<F>> = match self.cfg.mode {
            RenderMode::Volumetric => items
                .iter()
                .filter_map(|&k| Packed::new(&self.projected[k as usize]))
                .collect(),
            RenderMode::Surfel => Vec::new(),
        };
        // Splats whose cutoff ellipse meets the current row, with their
        // x extent on it.
        let mut row: Vec<(usize, F, F)> = Vec::with_capacity(packed.len());
        for y in y0..y1 {
            if self.cfg.mode == RenderMode::Volumetric {
                let py = Self::pixel_center(x0, y).1;
                row.clear();
                row.extend(
                    packed
                        .iter()
                        .enumerate()
                        .filter_map(|(i, s)| s.row_span(py).map(|(lo, hi)| (i, lo, hi))),
                );
            }
            for x in x0..x1 {
                let (px, py) = Self::pixel_center(x, y);
                let mut acc = Composite::new();
                if self.cfg.mode == RenderMode::Volumetric {
                    for &(i, lo, hi) in &row {
                        if px < lo || px > hi {
                            continue;
                        }
                        let s = &packed[i];
                        let dx = px - s.mean[0];
                        let dy = py - s.mean[1];
                        let q = s.conic[0] * dx * dx + s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                        let g = falloff(q);
                        if !(g > F::zero()) {
                            continue;
                        }
                        acc.push(s.opacity * g, s.depth, &s.color, None);
                        if capture {
                            block.rays.push((acc.last_weight, s.depth));
                        }
                        if acc.trans < stop {
                            break;
                        }
                    }
                } else {
                    let ray = self.cam.ray(px, py);
                    for &k in items {
                        let p = &self.projected[k as usize];
                        if !p.contains(x, y) {
                            continue;
                        }
                        let Some(s) = p.eval(px, py, &ray) else {
                            continue;
                        };
                        acc.push(p.opacity * s.g, s.depth, &p.color, Some(&p.normal));
                        if capture {
                            block.rays.push((acc.last_weight, s.depth));
                        }
                        if acc.trans < stop {
                            break;
                        }
                    }
                }
                let px = self.finish(acc);
                block.rgb.extend_from_slice(&px.rgb);
                block.alpha.push(px.alpha);
                block.depth.push(px.depth);
                block.normal.extend_from_slice(&px.normal);
                if capture {
                    block.ray_counts.push(px.count);
                }
            }
        }
        block
    }

    pub fn render<E: Executor>(
        &self,
        exec: &E,
        capture: bool,
    ) -> (RenderOutput<F>, Option<RayDistortionInput<F>>) {
        let (w, h) = (self.cam.width, self.cam.height);
        let n_tiles = self.tiles_x * self.tiles_y;
        let blocks = exec.map_indexed(n_tiles, |t| self.render_tile(t, capture));
        let mut out = RenderOutput::new(w, h);
        let mut counts = if capture {
            vec![0usize; w * h]
        } else {
            Vec::new()
        };
        for (t, b) in blocks.iter().enumerate() {
            let [x0, y0, x1, _] = self.tile_rect(t);
            let tw = x1 - x0;
            for (k, &a) in b.alpha.iter().enumerate() {
                let p = (y0 + k / tw) * w + x0 + k % tw;
                out.alpha[p] = a;
                out.depth[p] = b.depth[k];
                out.rgb[3 * p..3 * p + 3].copy_from_slice(&b.rgb[3 * k..3 * k + 3]);
                out.normal[3 * p..3 * p + 3].copy_from_slice(&b.normal[3 * k..3 * k + 3]);
                if capture {
                    counts[p] = b.ray_counts[k];
                }
            }
        }
        if !capture {
            return (out, None);
        }
        let mut rays = RayDistortionInput {
            offsets: Vec::with_capacity(w * h + 1),
            weights: Vec::new(),
            depths: Vec::new(),
        };
        rays.offsets.push(0);
        for c in &counts {
            let last = *rays.offsets.last().unwrap();
            rays.offsets.push(last + c);
        }
        let total = *rays.offsets.last().unwrap();
        rays.weights = vec![F::zero(); total];
        rays.depths = vec![F::zero(); total];
        for (t, b) in blocks.iter().enumerate() {
            let [x0, y0, x1, _] = self.tile_rect(t);
            let tw = x1 - x0;
            let mut src = 0;
            for (k, &c) in b.ray_counts.iter().enumerate() {
                let p = (y0 + k / tw) * w + x0 + k % tw;
                let dst = rays.offsets[p];
                for j in 0..c {
                    rays.weights[dst + j] = b.rays[src + j].0;
                    rays.depths[dst + j] = b.rays[src + j].1;
                }
                src += c;
            }
        }
        (out, Some(rays))
    }

    pub fn render_reference(&self) -> RenderOutput<F> {
        let (w, h) = (self.cam.width, self.cam.height);
        let mut out = RenderOutput::new(w, h);
        let mut contrib = Vec::new();
        for y in 0..h {
            for x in 0..w {
                self.composite(self.projected.iter(), x, y, false, &mut contrib);
                let px = self.resolve(|slot| &self.projected[slot], &contrib);
                let p = y * w + x;
                out.rgb[3 * p..3 * p + 3].copy_from_slice(&px.rgb);
                out.alpha[p] = px.alpha;
                out.depth[p] = px.depth;
                out.normal[3 * p..3 * p + 3].copy_from_slice(&px.normal);
            }
        }
        out
    }

    fn backward_tile(&self, t: usize, up: &Upstream<'_, F>) -> Vec<SplatAccum<F>> {
        let items = self.tile_items(t);
        let mut acc = vec![SplatAccum::zero(); items.len()];
        let [x0, y0, x1, y1] = self.tile_rect(t);
        let w = self.cam.width;
        let bg = self.cfg.background.map(|b| lit::<F>(b as f64));
        let surfel = self.cfg.mode == RenderMode::Surfel;
        let mut contrib = Vec::new();
        let get = |v: &[F], i: usize| if v.is_empty() { F::zero() } else { v[i] };
        for y in y0..y1 {
            for x in x0..x1 {
                let p = y * w + x;
                let list = items.iter().map(|&k| &self.projected[k as usize]);
                self.composite(list, x, y, true, &mut contrib);
                if contrib.is_empty() {
                    continue;
                }
                let lookup = |slot: usize| &self.projected[items[slot] as usize];
                let g_rgb = [
                    get(up.rgb, 3 * p),
                    get(up.rgb, 3 * p + 1),
                    get(up.rgb, 3 * p + 2),
                ];
                let mut g_alpha = get(up.alpha, p);
                let mut g_depth_num = F::zero();
                let mut g_normal_num = [F::zero(); 3];
                let g_depth = get(up.depth, p);
                let g_normal = [
                    get(up.normal, 3 * p),
                    get(up.normal, 3 * p + 1),
                    get(up.normal, 3 * p + 2),
                ];
                let has_depth = g_depth != F::zero();
                let has_normal = surfel && g_normal.iter().any(|g| *g != F::zero());
                if has_depth || has_normal {
                    let px = self.resolve(lookup, &contrib);
                    if px.alpha >= lit::<F>(MIN_COVERAGE) {
                        // depth = N / A
                        g_depth_num = g_depth / px.alpha;
                        g_alpha = g_alpha - g_depth * px.depth / px.alpha;
                    }
                    if has_normal && px.normal.iter().any(|v| *v != F::zero()) {
                        // normal = n / |n|
                        let mut num = [F::zero(); 3];
                        for c in &contrib {
                            let w = c.alpha * c.transmittance;
                            let q = lookup(c.slot);
                            for i in 0..3 {
                                num[i] = num[i] + w * q.normal[i];
                            }
                        }
                        let len = num.iter().fold(F::zero(), |a, v| a + *v * *v).sqrt();
                        let proj = (0..3).fold(F::zero(), |a, i| a + px.normal[i] * g_normal[i]);
                        for i in 0..3 {
                            g_normal_num[i] = (g_normal[i] - px.normal[i] * proj) / len;
                        }
                    }
                }
                let ray_base = if up.ray_weights.is_empty() && up.ray_depths.is_empty() {
                    None
                } else {
                    debug_assert_eq!(up.ray_offsets[p + 1] - up.ray_offsets[p], contrib.len());
                    Some(up.ray_offsets[p])
                };
                let (fx, fy) = Self::pixel_center(x, y);
                let ray = self.cam.ray(fx, fy);
                let mut suffix = F::zero();
                for (k, c) in contrib.iter().enumerate().rev() {
                    let q = lookup(c.slot);
                    let w = c.alpha * c.transmittance;
                    let mut s = g_alpha + g_depth_num * c.depth;
                    for i in 0..3 {
                        s = s + g_rgb[i] * (q.color[i] - bg[i]) + g_normal_num[i] * q.normal[i];
                    }
                    let mut d_depth = g_depth_num * w;
                    if let Some(base) = ray_base {
                        s = s + get(up.ray_weights, base + k);
                        d_depth = d_depth + get(up.ray_depths, base + k);
                    }
                    let d_alpha = c.transmittance * (s - suffix);
                    suffix = c.alpha * s + (F::one() - c.alpha) * suffix;
                    let a = &mut acc[c.slot];
                    for i in 0..3 {
                        a.color[i] = a.color[i] + g_rgb[i] * w;
                    }
                    let d_normal = g_normal_num.map(|g| g * w);
                    q.accumulate(fx, fy, &ray, d_alpha, d_depth, d_normal, a);
                }
            }
        }
        acc
    }

    pub fn backward<E: Executor>(&self, exec: &E, up: &Upstream<'_, F>) -> Vec<Splat<F>> {
        let n_tiles = self.tiles_x * self.tiles_y;
        let per_tile = exec.map_indexed(n_tiles, |t| self.backward_tile(t, up));
        let mut acc = vec![SplatAccum::zero(); self.projected.len()];
        for (t, local) in per_tile.iter().enumerate() {
            for (&k, a) in self.tile_items(t).iter().zip(local) {
                acc[k as usize].add(a);
            }
        }
        let grads = exec.map_indexed(self.projected.len(), |k| {
            let p = &self.projected[k];
            splat_backward(&self.splats[p.index], &self.cam, self.cfg.mode, &acc[k])
        });
        let mut out = vec![Splat::zero(); self.splats.len()];
        for (p, g) in self.projected.iter().zip(grads) {
            out[p.index] = g;
        }
        out
    }
}
