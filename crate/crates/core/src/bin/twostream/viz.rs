//! PNG overlays: mask tint, regressed and refined boxes, class + score label.

use std::path::Path;

use twostream::geometry::BBox;
use twostream::pipeline::DetectionResult;
use twostream::{Error, Result};

const REGRESSED: [u8; 3] = [255, 220, 0];
const REFINED: [u8; 3] = [0, 230, 255];
const PALETTE: [[u8; 3]; 3] = [[230, 40, 40], [40, 200, 60], [60, 90, 240]];

/// 3×5 glyphs, one row per entry, high bit on the left.
fn glyph(ch: char) -> [u8; 5] {
    match ch {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        'R' => [6, 5, 6, 5, 5],
        'E' => [7, 4, 6, 4, 7],
        'T' => [7, 2, 2, 2, 2],
        _ => [0; 5],
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = 3 * (y as usize * self.w + x as usize);
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn rect(&mut self, b: &BBox, c: [u8; 3]) {
        let (x0, y0) = (b.x.round() as i64, b.y.round() as i64);
        let (x1, y1) = ((b.right().round() as i64) - 1, (b.bottom().round() as i64) - 1);
        for x in x0..=x1 {
            self.put(x, y0, c);
            self.put(x, y1, c);
        }
        for y in y0..=y1 {
            self.put(x0, y, c);
            self.put(x1, y, c);
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, c: [u8; 3]) {
        for (n, ch) in s.chars().enumerate() {
            let g = glyph(ch);
            for (r, bits) in g.iter().enumerate() {
                for col in 0..3 {
                    if bits >> (2 - col) & 1 == 1 {
                        self.put(x + 4 * n as i64 + col, y + r as i64, c);
                    }
                }
            }
        }
    }
}

pub fn render(image: &[f32], w: usize, h: usize, dets: &[DetectionResult], class_names: &[&str], out: &Path) -> Result<()> {
    let mut cv = Canvas {
        w,
        h,
        px: image.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
    };
    for d in dets {
        let tint = PALETTE[d.class_id % PALETTE.len()];
        for (i, &m) in d.mask.data.iter().enumerate() {
            if m != 0 {
                for c in 0..3 {
                    let v = &mut cv.px[3 * i + c];
                    *v = ((*v as u16 + tint[c] as u16) / 2) as u8;
                }
            }
        }
    }
    for d in dets {
        cv.rect(&d.box_regressed, REGRESSED);
        cv.rect(&d.box_refined, REFINED);
        let initial = class_names
            .get(d.class_id)
            .and_then(|n| n.chars().next())
            .map(|c| c.to_ascii_uppercase())
            .unwrap_or('?');
        let label = format!("{initial}{:.2}", d.score);
        let y = (d.box_refined.y.round() as i64 - 6).max(0);
        cv.text(d.box_refined.x.round() as i64, y, &label, REFINED);
    }
    image::save_buffer(out, &cv.px, w as u32, h as u32, image::ExtendedColorType::Rgb8).map_err(|e| Error::Format {
        path: out.to_path_buf(),
        msg: e.to_string(),
    })
}
