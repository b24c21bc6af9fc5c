//! Axis-aligned boxes in continuous pixel coordinates.
//!
//! A box `(x, y, w, h)` covers `[x, x+w) × [y, y+h)`; pixel `(col, row)` is
//! inside when its center `(col+0.5, row+0.5)` is.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        iw.max(0.0) * ih.max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Intersection with `[0, width) × [0, height)`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = self.right().clamp(0.0, width);
        let y1 = self.bottom().clamp(0.0, height);
        BBox::from_corners(x0, y0, x1.max(x0), y1.max(y0))
    }

    pub fn scaled(&self, factor: f64) -> BBox {
        BBox::new(self.x * factor, self.y * factor, self.w * factor, self.h * factor)
    }

    /// Horizontal mirror inside an image of the given width.
    pub fn flip_horizontal(&self, width: f64) -> BBox {
        BBox::new(width - self.right(), self.y, self.w, self.h)
    }

    /// Whether the center of pixel `(col, row)` lies inside the box.
    #[inline]
    pub fn contains_pixel(&self, col: usize, row: usize) -> bool {
        let (cx, cy) = (col as f64 + 0.5, row as f64 + 0.5);
        cx >= self.x && cx < self.right() && cy >= self.y && cy < self.bottom()
    }

    /// Inclusive index range of pixel columns whose centers are inside, clipped to `[0, n)`.
    pub fn pixel_cols(&self, n: usize) -> Option<(usize, usize)> {
        pixel_span(self.x, self.right(), n)
    }

    pub fn pixel_rows(&self, n: usize) -> Option<(usize, usize)> {
        pixel_span(self.y, self.bottom(), n)
    }
}

fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    // first index i with i + 0.5 >= lo, last with i + 0.5 < hi
    let first = (lo - 0.5).ceil().max(0.0);
    let last = ((hi - 0.5).ceil() - 1.0).min(n as f64 - 1.0);
    (first <= last).then(|| (first as usize, last as usize))
}
