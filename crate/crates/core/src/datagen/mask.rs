use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Row-major binary mask; every entry is 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(width, height);
        for r in 0..height {
            for c in 0..width {
                m.data[r * width + c] = f(c, r) as u8;
            }
        }
        m
    }

    /// Thresholds a soft map (`value ≥ threshold` → 1).
    pub fn from_soft(width: usize, height: usize, values: &[f32], threshold: f32) -> Self {
        assert_eq!(values.len(), width * height);
        BinaryMask {
            width,
            height,
            data: values.iter().map(|&v| (v >= threshold) as u8).collect(),
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: bool) {
        self.data[row * self.width + col] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a != 0 && b != 0)
            .count()
    }

    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self.count() + other.count() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn flip_horizontal(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |c, r| self.get(self.width - 1 - c, r))
    }

    /// Block-average downsampling by an integer `stride`; a cell is foreground
    /// when at least half of its source pixels are.
    pub fn downsample_area(&self, stride: usize) -> BinaryMask {
        let (w, h) = (self.width.div_ceil(stride), self.height.div_ceil(stride));
        BinaryMask::from_fn(w, h, |c, r| {
            let (mut fg, mut total) = (0usize, 0usize);
            for y in r * stride..((r + 1) * stride).min(self.height) {
                for x in c * stride..((c + 1) * stride).min(self.width) {
                    total += 1;
                    fg += self.get(x, y) as usize;
                }
            }
            2 * fg >= total
        })
    }
}

/// Tightest `(x, y, w, h)` covering every foreground pixel.
pub fn min_enclosing_box(mask: &BinaryMask) -> Result<BBox> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for r in 0..mask.height {
        let row = &mask.data[r * mask.width..(r + 1) * mask.width];
        let Some(first) = row.iter().position(|&v| v != 0) else {
            continue;
        };
        let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
        bounds = Some(match bounds {
            None => (first, r, last, r),
            Some((x0, y0, x1, _)) => (x0.min(first), y0, x1.max(last), r),
        });
    }
    let (x0, y0, x1, y1) = bounds.ok_or(Error::EmptyMask)?;
    Ok(BBox::new(
        x0 as f64,
        y0 as f64,
        (x1 - x0 + 1) as f64,
        (y1 - y0 + 1) as f64,
    ))
}
