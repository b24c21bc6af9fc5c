//! Synthetic scenes of flat-colored rectangles, ellipses and triangles on a
//! noisy background.
//!
//! All placement and rasterization decisions use integer arithmetic on a
//! ChaCha stream, so a seed reproduces the same scene on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::{min_enclosing_box, BinaryMask};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const CLASS_NAMES: [&str; 3] = ["rectangle", "ellipse", "triangle"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub num_classes: usize,
    /// Half-width of the additive uniform noise, in 8-bit levels.
    pub noise: u8,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 128,
            min_instances: 1,
            max_instances: 4,
            num_classes: 3,
            noise: 12,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::Generation(format!(
                "image_size must be ≥ 32, got {}",
                self.image_size
            )));
        }
        if !(2..=3).contains(&self.num_classes) {
            return Err(Error::Generation(format!(
                "num_classes must be 2 or 3, got {}",
                self.num_classes
            )));
        }
        if self.min_instances > self.max_instances {
            return Err(Error::Generation(format!(
                "instance range {}..={} is empty",
                self.min_instances, self.max_instances
            )));
        }
        let (lo, _) = self.extent_range();
        if self.min_instances * lo * lo > self.image_size * self.image_size {
            return Err(Error::Generation(format!(
                "{} instances of at least {lo}×{lo} px cannot fit in a {}×{} image",
                self.min_instances, self.image_size, self.image_size
            )));
        }
        Ok(())
    }

    /// Shape extent range in pixels: 8%–60% of the image side.
    fn extent_range(&self) -> (usize, usize) {
        let s = self.image_size;
        ((8 * s).div_ceil(100), 60 * s / 100)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub class_id: usize,
    pub bbox: BBox,
    pub mask: BinaryMask,
}

/// One generated image with its per-instance ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub width: usize,
    pub height: usize,
    /// `H×W×3` interleaved RGB in `[0, 1]`.
    pub image: Vec<f32>,
    pub instances: Vec<Instance>,
}

impl SceneSample {
    /// Planar `3×H×W` copy of the image for the network.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[c * n + i] = self.image[3 * i + c];
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> SceneSample {
        let (w, h) = (self.width, self.height);
        let mut image = vec![0.0; self.image.len()];
        for r in 0..h {
            for c in 0..w {
                let (dst, src) = (3 * (r * w + c), 3 * (r * w + (w - 1 - c)));
                image[dst..dst + 3].copy_from_slice(&self.image[src..src + 3]);
            }
        }
        SceneSample {
            width: w,
            height: h,
            image,
            instances: self
                .instances
                .iter()
                .map(|i| Instance {
                    class_id: i.class_id,
                    bbox: i.bbox.flip_horizontal(w as f64),
                    mask: i.mask.flip_horizontal(),
                })
                .collect(),
        }
    }
}

/// Shape footprint in pixel coordinates.
#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { x0: i64, y0: i64, w: i64, h: i64 },
    Ellipse { x0: i64, y0: i64, w: i64, h: i64 },
    Triangle { v: [(i64, i64); 3] },
}

impl Shape {
    /// Inside test for the center of pixel `(c, r)`, in doubled coordinates.
    fn contains(&self, c: i64, r: i64) -> bool {
        let (px, py) = (2 * c + 1, 2 * r + 1);
        match *self {
            Shape::Rect { x0, y0, w, h } => c >= x0 && c < x0 + w && r >= y0 && r < y0 + h,
            Shape::Ellipse { x0, y0, w, h } => {
                let (cx, cy) = (2 * x0 + w, 2 * y0 + h);
                let (dx, dy) = (px - cx, py - cy);
                dx * dx * h * h + dy * dy * w * w <= w * w * h * h
            }
            Shape::Triangle { v } => {
                let edge = |a: (i64, i64), b: (i64, i64)| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                let (e0, e1, e2) = (edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0]));
                (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0)
            }
        }
    }

    fn rasterize(&self, size: usize) -> BinaryMask {
        BinaryMask::from_fn(size, size, |c, r| self.contains(c as i64, r as i64))
    }
}

fn random_shape(rng: &mut ChaCha8Rng, class_id: usize, cfg: &SceneConfig) -> Shape {
    let (lo, hi) = cfg.extent_range();
    let s = cfg.image_size as i64;
    let w = rng.random_range(lo..=hi) as i64;
    let h = rng.random_range(lo..=hi) as i64;
    let x0 = rng.random_range(0..=s - w);
    let y0 = rng.random_range(0..=s - h);
    match class_id {
        0 => Shape::Rect { x0, y0, w, h },
        1 => Shape::Ellipse { x0, y0, w, h },
        _ => {
            // apex on one horizontal edge, base spanning the opposite edge;
            // vertices sit on pixel-area corners (doubled coordinates)
            let apex_x = 2 * x0 + 2 * rng.random_range(0..=w);
            let (top, bottom) = (2 * y0, 2 * (y0 + h));
            let (left, right) = (2 * x0, 2 * (x0 + w));
            if rng.random_bool(0.5) {
                Shape::Triangle {
                    v: [(apex_x, top), (left, bottom), (right, bottom)],
                }
            } else {
                Shape::Triangle {
                    v: [(apex_x, bottom), (left, top), (right, top)],
                }
            }
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn color_distance(a: [u8; 3], b: [u8; 3]) -> u32 {
    a.iter().zip(&b).map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs()).sum()
}

/// Generates one scene. The same `(seed, cfg)` always yields the same sample.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = cfg.image_size;
    let background = random_color(&mut rng);
    let target = rng.random_range(cfg.min_instances..=cfg.max_instances);

    let mut placed: Vec<(usize, [u8; 3], BinaryMask)> = Vec::new();
    let max_attempts = 20 * target + 100;
    let mut attempts = 0;
    while placed.len() < target {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Generation(format!(
                "could not place {target} visible instances in {max_attempts} attempts"
            )));
        }
        let class_id = rng.random_range(0..cfg.num_classes);
        let shape = random_shape(&mut rng, class_id, cfg);
        let mut color = random_color(&mut rng);
        while color_distance(color, background) < 120 {
            color = random_color(&mut rng);
        }
        let mask = shape.rasterize(size);
        if mask.is_empty() {
            continue;
        }
        // later shapes occlude earlier ones
        for (_, _, earlier) in &mut placed {
            for (e, &m) in earlier.data.iter_mut().zip(&mask.data) {
                if m != 0 {
                    *e = 0;
                }
            }
        }
        placed.retain(|(_, _, m)| !m.is_empty());
        placed.push((class_id, color, mask));
    }

    let mut canvas = vec![background; size * size];
    for (_, color, mask) in &placed {
        for (px, &m) in canvas.iter_mut().zip(&mask.data) {
            if m != 0 {
                *px = *color;
            }
        }
    }
    let noise = cfg.noise as i32;
    let mut image = Vec::with_capacity(3 * size * size);
    for px in &canvas {
        for &v in px {
            let n = if noise > 0 { rng.random_range(-noise..=noise) } else { 0 };
            image.push((v as i32 + n).clamp(0, 255) as f32 / 255.0);
        }
    }

    let instances = placed
        .into_iter()
        .map(|(class_id, _, mask)| {
            Ok(Instance {
                class_id,
                bbox: min_enclosing_box(&mask)?,
                mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneSample {
        width: size,
        height: size,
        image,
        instances,
    })
}

/// Per-scene seed derived from a dataset seed (splitmix64 finalizer).
pub fn scene_seed(dataset_seed: u64, index: u64) -> u64 {
    let mut z = dataset_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_scenes(seed: u64, count: usize, cfg: &SceneConfig) -> Result<Vec<SceneSample>> {
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_scene(scene_seed(seed, i), cfg))
        .collect()
}
