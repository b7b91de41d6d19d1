//! Renderer seam and the procedural backend.
//!
//! The procedural painter draws a top-down orthographic view of the scene.
//! Ground and roofs are exact pixel-footprint averages of continuous world
//! functions, so a 2x2 box filter of level `l` reproduces level `l - 1`
//! up to 8-bit quantisation. Glyph disks are point-sampled at pixel centres.
//! Every pixel is a pure function of `(level, x, y)`, so any partition of a
//! region into sub-rectangles stitches back to the same bytes.

use crate::orchestrator::NodeProfile;
use crate::pyramid::{PyramidSpec, RenderTask};
use crate::scene::{Rgb, Scene};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("region {x}+{w}, {y}+{h} lies outside level {level} ({side} px)")]
    OutsideLevel {
        level: u32,
        x: u64,
        y: u64,
        w: u64,
        h: u64,
        side: u64,
    },
    #[error("level {0} is not part of the pyramid")]
    BadLevel(u32),
}

/// Synthetic task cost used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Seconds for one full-span task on a nominal node.
    pub base_seconds: f64,
    /// Uniform jitter half-width as a fraction of the duration.
    pub jitter_fraction: f64,
    /// Share of a task spent in render, tiling and storage.
    pub phase_split: [f64; 3],
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            base_seconds: 150.0,
            jitter_fraction: 0.085,
            phase_split: [0.90, 0.07, 0.03],
        }
    }
}

/// Renderer settings. Sample count, internal tile and denoise radius are
/// carried for provenance; the procedural backend ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RendererConfig {
    pub samples_per_pixel: u32,
    pub internal_tile_px: u32,
    pub denoise_radius: u32,
    pub synthetic_cost_model: Option<CostModel>,
}

impl Default for RendererConfig {
    fn default() -> Self {
        Self {
            samples_per_pixel: 20,
            internal_tile_px: 256,
            denoise_radius: 5,
            synthetic_cost_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderRequest {
    pub task: RenderTask,
    pub spec: PyramidSpec,
    pub config: RendererConfig,
}

/// 8-bit RGB raster, row-major, no padding.
#[derive(Clone, PartialEq, Eq)]
pub struct RegionImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub lossless: bool,
}

impl std::fmt::Debug for RegionImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegionImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("lossless", &self.lossless)
            .finish_non_exhaustive()
    }
}

impl RegionImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width as usize * height as usize * 3],
            lossless: true,
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        debug_assert!(
            x < self.width && y < self.height,
            "({x}, {y}) outside image"
        );
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        debug_assert!(
            x < self.width && y < self.height,
            "({x}, {y}) outside image"
        );
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    /// Copy of the `w` x `h` window at `(x, y)`.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> RegionImage {
        let mut out = RegionImage::new(w, h);
        out.lossless = self.lossless;
        let row_bytes = w as usize * 3;
        for r in 0..h as usize {
            let src = ((y as usize + r) * self.width as usize + x as usize) * 3;
            out.pixels[r * row_bytes..(r + 1) * row_bytes]
                .copy_from_slice(&self.pixels[src..src + row_bytes]);
        }
        out
    }

    /// Paste `other` with its top-left corner at `(x, y)`.
    pub fn blit(&mut self, other: &RegionImage, x: u32, y: u32) {
        let row_bytes = other.width as usize * 3;
        for r in 0..other.height as usize {
            let dst = ((y as usize + r) * self.width as usize + x as usize) * 3;
            self.pixels[dst..dst + row_bytes]
                .copy_from_slice(&other.pixels[r * row_bytes..(r + 1) * row_bytes]);
        }
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0u64; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as u64;
            }
        }
        let n = (self.width as u64 * self.height as u64).max(1) as f64;
        sums.map(|s| s as f64 / n)
    }
}

pub trait Renderer: Send + Sync {
    fn render_region(&self, request: &RenderRequest) -> Result<RegionImage, RenderError>;
}

/// Analytic painter over registered scenes.
#[derive(Debug, Clone, Default)]
pub struct ProceduralRenderer {
    scenes: HashMap<String, Arc<Scene>>,
}

impl ProceduralRenderer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_scene(scene: Scene) -> Self {
        let mut r = Self::new();
        r.add_scene(scene);
        r
    }

    pub fn add_scene(&mut self, scene: Scene) {
        self.scenes.insert(scene.scene_id.clone(), Arc::new(scene));
    }

    pub fn scene(&self, id: &str) -> Option<&Arc<Scene>> {
        self.scenes.get(id)
    }
}

impl Renderer for ProceduralRenderer {
    fn render_region(&self, request: &RenderRequest) -> Result<RegionImage, RenderError> {
        let task = &request.task;
        let scene = self
            .scenes
            .get(&task.scene_id)
            .ok_or_else(|| RenderError::UnknownScene(task.scene_id.clone()))?;
        paint_rect(
            scene,
            &request.spec,
            task.level,
            task.origin_x,
            task.origin_y,
            task.span_px,
            task.span_px,
        )
    }
}

/// Paints the `w` x `h` window at pixel `(x0, y0)` of the level image.
pub fn paint_rect(
    scene: &Scene,
    spec: &PyramidSpec,
    level: u32,
    x0: u64,
    y0: u64,
    w: u64,
    h: u64,
) -> Result<RegionImage, RenderError> {
    if level == 0 || level > spec.max_level {
        return Err(RenderError::BadLevel(level));
    }
    let side = spec.side_px(level);
    if w == 0 || h == 0 || x0 + w > side || y0 + h > side {
        return Err(RenderError::OutsideLevel {
            level,
            x: x0,
            y: y0,
            w,
            h,
            side,
        });
    }
    let (w32, h32) = (w as u32, h as u32);
    let px_mm = spec.world_side_mm / side as f64;
    let world = spec.world_side_mm;

    let octaves = Octaves::new(scene.plane.seed, side);
    let xs: Vec<AxisSample> = (x0..x0 + w)
        .map(|x| AxisSample::new(x, px_mm, world, &octaves, &scene.plane))
        .collect();
    let ys: Vec<AxisSample> = (y0..y0 + h)
        .map(|y| AxisSample::new(y, px_mm, world, &octaves, &scene.plane))
        .collect();

    let mut img = RegionImage::new(w32, h32);
    let k = octaves.count();
    for (j, sy) in ys.iter().enumerate() {
        for (i, sx) in xs.iter().enumerate() {
            let mut texture = 0.0;
            for o in 0..k {
                texture += sx.factors[o] * sy.factors[o];
            }
            texture *= TEXTURE_AMPLITUDE;
            let u = sx.norm;
            let v = sy.norm;
            let ground = [
                120.0 + 30.0 * u - 10.0 * v + texture,
                128.0 - 15.0 * u + 20.0 * v + texture,
                110.0 + 10.0 * u + 25.0 * v + texture,
            ];
            let cov = sx.coverage * sy.coverage;
            let px = if cov > 0.0 && !is_park(scene.plane.seed, sx.block, sy.block) {
                let roof = roof_shade(scene.plane.seed, sx.block, sy.block) + 0.5 * texture;
                ground.map(|g| g * (1.0 - cov) + roof * cov)
            } else {
                ground
            };
            img.set(i as u32, j as u32, px.map(quantize));
        }
    }

    draw_glyphs(&mut img, scene, spec, level, x0, y0, px_mm);
    Ok(img)
}

const TEXTURE_AMPLITUDE: f64 = 4.0;
const GLYPH_RIM: Rgb = [245, 245, 245];
/// Fraction of the radius filled with the value colour; the rest is a rim.
const GLYPH_CORE: f64 = 0.8;

#[inline]
fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit_hash(seed: u64, a: i64, b: i64, salt: u64) -> f64 {
    let h = mix(seed ^ mix(a as u64 ^ mix(b as u64 ^ mix(salt))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn is_park(seed: u64, bx: i64, by: i64) -> bool {
    unit_hash(seed, bx, by, 1) < 0.15
}

fn roof_shade(seed: u64, bx: i64, by: i64) -> f64 {
    70.0 + 120.0 * unit_hash(seed, bx, by, 2)
}

/// Product-of-sines octaves with world periods `world / 2^k`, down to two
/// pixels per period on the level being drawn.
struct Octaves {
    phases: Vec<f64>,
    periods_px: Vec<f64>,
}

impl Octaves {
    fn new(seed: u64, side_px: u64) -> Self {
        let mut phases = Vec::new();
        let mut periods_px = Vec::new();
        let mut k = 0u32;
        loop {
            let period = side_px as f64 / 2f64.powi(k as i32);
            if period < 2.0 {
                break;
            }
            periods_px.push(period);
            phases.push(2.0 * PI * unit_hash(seed, k as i64, 0, 3));
            k += 1;
        }
        Self { phases, periods_px }
    }

    fn count(&self) -> usize {
        self.periods_px.len()
    }
}

/// Per-row or per-column quantities; the 2-D footprint average factorises.
struct AxisSample {
    /// Footprint-averaged sine factor per octave.
    factors: Vec<f64>,
    /// Pixel centre as a fraction of the world side.
    norm: f64,
    /// Fraction of the pixel footprint covered by building strips.
    coverage: f64,
    block: i64,
}

impl AxisSample {
    fn new(
        idx: u64,
        px_mm: f64,
        world: f64,
        octaves: &Octaves,
        plane: &crate::scene::Plane,
    ) -> Self {
        let factors = octaves
            .periods_px
            .iter()
            .zip(&octaves.phases)
            .map(|(&p, &phase)| {
                let z = PI / p;
                let frac = ((idx as f64).rem_euclid(p) + 0.5) / p;
                (2.0 * PI * frac + phase).sin() * (z.sin() / z)
            })
            .collect();
        let lo = idx as f64 * px_mm;
        let hi = lo + px_mm;
        let centre = lo + 0.5 * px_mm;
        let (coverage, block) = if plane.buildings {
            let cov = (built_measure(hi, plane) - built_measure(lo, plane)) / px_mm;
            (
                cov.clamp(0.0, 1.0),
                (centre / plane.block_mm).floor() as i64,
            )
        } else {
            (0.0, 0)
        };
        Self {
            factors,
            norm: centre / world,
            coverage,
            block,
        }
    }
}

/// Length of building strips inside `[0, x]` along one axis.
fn built_measure(x: f64, plane: &crate::scene::Plane) -> f64 {
    let b = plane.block_mm;
    let half_street = 0.5 * plane.street_mm;
    let width = b - plane.street_mm;
    let whole = (x / b).floor();
    let rest = x - whole * b;
    whole * width + (rest - half_street).clamp(0.0, width)
}

fn draw_glyphs(
    img: &mut RegionImage,
    scene: &Scene,
    spec: &PyramidSpec,
    level: u32,
    x0: u64,
    y0: u64,
    px_mm: f64,
) {
    let (w, h) = (img.width as i64, img.height as i64);
    for glyph in &scene.glyphs {
        let Some(r) = glyph.radius_at(spec, level) else {
            continue;
        };
        let gx = glyph.position.x_mm;
        let gy = glyph.position.y_mm;
        // pixel index range whose centres can fall inside the disk
        let lo_x = ((gx - r) / px_mm - 0.5).ceil() as i64 - x0 as i64;
        let hi_x = ((gx + r) / px_mm - 0.5).floor() as i64 - x0 as i64;
        let lo_y = ((gy - r) / px_mm - 0.5).ceil() as i64 - y0 as i64;
        let hi_y = ((gy + r) / px_mm - 0.5).floor() as i64 - y0 as i64;
        let r2 = r * r;
        let core2 = (GLYPH_CORE * r) * (GLYPH_CORE * r);
        for j in lo_y.max(0)..=hi_y.min(h - 1) {
            let cy = ((j + y0 as i64) as f64 + 0.5) * px_mm - gy;
            for i in lo_x.max(0)..=hi_x.min(w - 1) {
                let cx = ((i + x0 as i64) as f64 + 0.5) * px_mm - gx;
                let d2 = cx * cx + cy * cy;
                if d2 <= core2 {
                    img.set(i as u32, j as u32, glyph.color);
                } else if d2 <= r2 {
                    img.set(i as u32, j as u32, GLYPH_RIM);
                }
            }
        }
    }
}

/// Synthetic duration of one task attempt on `node`.
///
/// `base_seconds * area_ratio * speed_factor * (1 + jitter)`, times
/// `outlier_factor` when the node has lost its GPU. `area_ratio` scales
/// clamped low-level tasks by their pixel area relative to a full task.
pub fn estimate_task_seconds<R: Rng + ?Sized>(
    request: &RenderRequest,
    cost: &CostModel,
    node: &NodeProfile,
    outlier_factor: f64,
    rng: &mut R,
) -> f64 {
    let ratio = request.task.span_px as f64 / request.spec.task_px as f64;
    let jitter = if cost.jitter_fraction > 0.0 {
        rng.random_range(-cost.jitter_fraction..=cost.jitter_fraction)
    } else {
        0.0
    };
    let slow = if node.gpu_ok { 1.0 } else { outlier_factor };
    cost.base_seconds * ratio * ratio * node.speed_factor * (1.0 + jitter) * slow
}
