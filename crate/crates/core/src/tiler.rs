//! Cutting rendered regions into tiles and deriving the levels beneath them.
//!
//! Subsampling computes `G[l-1](i, j) = sum_m sum_n w(m, n) G[l](2i + m, 2j + n)`
//! with integer weights over a power-of-two denominator, so the weights sum
//! to exactly one and quantisation is a single round-half-up per channel.

use crate::pyramid::{tiles_emitted_per_task, PyramidSpec, RenderTask, TileCoord};
use crate::render::RegionImage;
use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("cannot subsample a {width}x{height} image: dimensions must be even")]
    OddDimensions { width: u32, height: u32 },
    #[error("region is {got_w}x{got_h} but task {task_id} spans {span} px")]
    RegionMismatch {
        task_id: String,
        span: u64,
        got_w: u32,
        got_h: u32,
    },
    #[error("produced {produced} tiles where the plan expects {expected}")]
    CountMismatch { produced: usize, expected: usize },
    #[error("tile {coord} is {width}x{height}, expected {tile_px}x{tile_px}")]
    BadTile {
        coord: TileCoord,
        width: u32,
        height: u32,
        tile_px: u64,
    },
    #[error("encoding tile {coord} failed: {source}")]
    Encode {
        coord: TileCoord,
        source: image::ImageError,
    },
    #[error("decoding tile failed: {0}")]
    Decode(#[from] image::ImageError),
}

/// Subsampling kernel with integer weights `w(m, n) / denominator`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kernel {
    /// Offset of the first tap relative to `2i` (`0` for the box, `-1` for 4x4).
    pub origin: i32,
    pub size: u32,
    /// Row-major `size * size` integer weights.
    pub weights: Vec<u32>,
    /// Power of two equal to the weight sum.
    pub denominator: u32,
}

impl Kernel {
    /// 2x2 box, each weight one quarter.
    pub fn box2() -> Self {
        Self {
            origin: 0,
            size: 2,
            weights: vec![1, 1, 1, 1],
            denominator: 4,
        }
    }

    /// 4x4 binomial `[1 3 3 1]` outer product over 64, with reflected edges.
    pub fn binomial4() -> Self {
        let taps = [1u32, 3, 3, 1];
        let weights = taps
            .iter()
            .flat_map(|a| taps.iter().map(move |b| a * b))
            .collect();
        Self {
            origin: -1,
            size: 4,
            weights,
            denominator: 64,
        }
    }

    pub fn weight(&self, m: u32, n: u32) -> u32 {
        self.weights[(m * self.size + n) as usize]
    }

    pub fn is_normalized(&self) -> bool {
        self.weights.iter().sum::<u32>() == self.denominator && self.denominator.is_power_of_two()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.size).all(|m| (0..self.size).all(|n| self.weight(m, n) == self.weight(n, m)))
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Self::box2()
    }
}

/// Reflect an out-of-range coordinate back into `0..len` (edge pixel repeated).
#[inline]
fn reflect(i: i64, len: i64) -> usize {
    let mut i = i;
    if i < 0 {
        i = -i - 1;
    }
    if i >= len {
        i = 2 * len - i - 1;
    }
    i.clamp(0, len - 1) as usize
}

/// Halve both dimensions with `kernel`.
pub fn subsample(image: &RegionImage, kernel: &Kernel) -> Result<RegionImage, TileError> {
    let (w, h) = (image.width, image.height);
    if w % 2 != 0 || h % 2 != 0 || w == 0 || h == 0 {
        return Err(TileError::OddDimensions {
            width: w,
            height: h,
        });
    }
    if *kernel == Kernel::box2() {
        return Ok(subsample_box(image));
    }
    let (ow, oh) = (w / 2, h / 2);
    let mut out = RegionImage::new(ow, oh);
    out.lossless = image.lossless;
    let half = kernel.denominator / 2;
    let shift = kernel.denominator.trailing_zeros();
    let src = &image.pixels;
    let stride = w as usize * 3;
    for i in 0..oh {
        let rows: Vec<usize> = (0..kernel.size)
            .map(|m| reflect(2 * i as i64 + kernel.origin as i64 + m as i64, h as i64))
            .collect();
        for j in 0..ow {
            let cols: Vec<usize> = (0..kernel.size)
                .map(|n| reflect(2 * j as i64 + kernel.origin as i64 + n as i64, w as i64))
                .collect();
            let mut acc = [0u32; 3];
            for (m, &r) in rows.iter().enumerate() {
                for (n, &c) in cols.iter().enumerate() {
                    let wgt = kernel.weight(m as u32, n as u32);
                    let p = r * stride + c * 3;
                    for ch in 0..3 {
                        acc[ch] += wgt * src[p + ch] as u32;
                    }
                }
            }
            out.set(j, i, acc.map(|a| ((a + half) >> shift) as u8));
        }
    }
    Ok(out)
}

fn subsample_box(image: &RegionImage) -> RegionImage {
    let (ow, oh) = (image.width / 2, image.height / 2);
    let mut out = RegionImage::new(ow, oh);
    out.lossless = image.lossless;
    let stride = image.width as usize * 3;
    let src = &image.pixels;
    let dst = &mut out.pixels;
    for i in 0..oh as usize {
        let top = &src[2 * i * stride..(2 * i + 1) * stride];
        let bottom = &src[(2 * i + 1) * stride..(2 * i + 2) * stride];
        let row = &mut dst[i * ow as usize * 3..(i + 1) * ow as usize * 3];
        for j in 0..ow as usize {
            for ch in 0..3 {
                let a = 6 * j + ch;
                let s = top[a] as u32 + top[a + 3] as u32 + bottom[a] as u32 + bottom[a + 3] as u32;
                row[3 * j + ch] = ((s + 2) >> 2) as u8;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub coord: TileCoord,
    pub image: RegionImage,
}

/// Cut the task's own level out of `region`, then repeatedly subsample and
/// cut each derived level. Output order matches [`tiles_emitted_per_task`].
pub fn split_and_derive(
    region: &RegionImage,
    task: &RenderTask,
    spec: &PyramidSpec,
    kernel: &Kernel,
) -> Result<Vec<Tile>, TileError> {
    if region.width as u64 != task.span_px || region.height as u64 != task.span_px {
        return Err(TileError::RegionMismatch {
            task_id: task.task_id.clone(),
            span: task.span_px,
            got_w: region.width,
            got_h: region.height,
        });
    }
    let expected = tiles_emitted_per_task(task, spec);
    let tile = spec.tile_px as u32;
    let mut tiles = Vec::with_capacity(expected.len());
    let mut current = region.clone();
    let lowest = spec.lowest_fed_level(task.level);
    for level in (lowest..=task.level).rev() {
        if level != task.level {
            if current.width < 2 * tile {
                break;
            }
            current = subsample(&current, kernel)?;
        }
        let shift = task.level - level;
        let col0 = (task.origin_x >> shift) / spec.tile_px;
        let row0 = (task.origin_y >> shift) / spec.tile_px;
        let per_side = current.width / tile;
        for r in 0..per_side {
            for c in 0..per_side {
                tiles.push(Tile {
                    coord: TileCoord::new(level, col0 + c as u64, row0 + r as u64),
                    image: current.crop(c * tile, r * tile, tile, tile),
                });
            }
        }
    }
    if tiles.len() != expected.len() {
        return Err(TileError::CountMismatch {
            produced: tiles.len(),
            expected: expected.len(),
        });
    }
    Ok(tiles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase", deny_unknown_fields)]
pub enum EncodePolicy {
    Png,
    Jpeg { quality: u8 },
}

/// Quality that lands procedural top-level tiles near 90 kB.
pub const DEFAULT_JPEG_QUALITY: u8 = 98;

impl Default for EncodePolicy {
    fn default() -> Self {
        EncodePolicy::Jpeg {
            quality: DEFAULT_JPEG_QUALITY,
        }
    }
}

impl EncodePolicy {
    pub fn extension(&self) -> &'static str {
        match self {
            EncodePolicy::Png => "png",
            EncodePolicy::Jpeg { .. } => "jpg",
        }
    }

    pub fn content_type(&self) -> &'static str {
        match self {
            EncodePolicy::Png => "image/png",
            EncodePolicy::Jpeg { .. } => "image/jpeg",
        }
    }

    pub fn is_lossless(&self) -> bool {
        matches!(self, EncodePolicy::Png)
    }
}

pub fn encode_tile(
    tile: &Tile,
    spec: &PyramidSpec,
    policy: EncodePolicy,
) -> Result<Vec<u8>, TileError> {
    let img = &tile.image;
    if img.width as u64 != spec.tile_px || img.height as u64 != spec.tile_px {
        return Err(TileError::BadTile {
            coord: tile.coord,
            width: img.width,
            height: img.height,
            tile_px: spec.tile_px,
        });
    }
    encode_image(img, policy).map_err(|source| TileError::Encode {
        coord: tile.coord,
        source,
    })
}

pub fn encode_image(img: &RegionImage, policy: EncodePolicy) -> Result<Vec<u8>, image::ImageError> {
    let mut out = Vec::new();
    match policy {
        EncodePolicy::Png => PngEncoder::new(&mut out).write_image(
            &img.pixels,
            img.width,
            img.height,
            ExtendedColorType::Rgb8,
        )?,
        EncodePolicy::Jpeg { quality } => JpegEncoder::new_with_quality(&mut out, quality)
            .write_image(&img.pixels, img.width, img.height, ExtendedColorType::Rgb8)?,
    }
    Ok(out)
}

/// Decode PNG or JPEG bytes back to RGB.
pub fn decode_tile(bytes: &[u8]) -> Result<RegionImage, TileError> {
    let format = image::guess_format(bytes)?;
    let lossless = format == ImageFormat::Png;
    let rgb = image::load_from_memory_with_format(bytes, format)?.to_rgb8();
    Ok(RegionImage {
        width: rgb.width(),
        height: rgb.height(),
        pixels: rgb.into_raw(),
        lossless,
    })
}
