use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A grayscale sprite with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Glyph {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Glyph {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Smallest box containing all non-zero pixels, as `(x0, y0, x1, y1)`
    /// inclusive; `None` for an empty glyph.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.at(x, y) > 0.0 {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb
    }

    /// Max-pools by `factor` in both axes; partial blocks at the edge are kept.
    pub fn downsample(&self, factor: usize) -> Glyph {
        let f = factor.max(1);
        let (w, h) = (self.width.div_ceil(f), self.height.div_ceil(f));
        let mut data = vec![0.0f32; w * h];
        for y in 0..self.height {
            for x in 0..self.width {
                let d = &mut data[(y / f) * w + x / f];
                *d = d.max(self.at(x, y));
            }
        }
        Glyph { width: w, height: h, data }
    }
}

pub const GLYPH_SIZE: usize = 28;

type Stroke = &'static [(f32, f32)];

const ZERO: &[Stroke] = &[&[
    (0.5, 0.0),
    (0.78, 0.1),
    (0.92, 0.35),
    (0.92, 0.65),
    (0.78, 0.9),
    (0.5, 1.0),
    (0.22, 0.9),
    (0.08, 0.65),
    (0.08, 0.35),
    (0.22, 0.1),
    (0.5, 0.0),
]];
const ONE: &[Stroke] = &[&[(0.3, 0.2), (0.55, 0.0), (0.55, 1.0)]];
const TWO: &[Stroke] = &[&[
    (0.12, 0.25),
    (0.3, 0.04),
    (0.68, 0.04),
    (0.86, 0.25),
    (0.8, 0.46),
    (0.12, 1.0),
    (0.92, 1.0),
]];
const THREE: &[Stroke] = &[&[
    (0.12, 0.06),
    (0.82, 0.06),
    (0.45, 0.44),
    (0.78, 0.56),
    (0.88, 0.78),
    (0.62, 1.0),
    (0.12, 0.92),
]];
const FOUR: &[Stroke] = &[&[(0.7, 1.0), (0.7, 0.0), (0.08, 0.7), (0.92, 0.7)]];
const FIVE: &[Stroke] = &[&[
    (0.86, 0.0),
    (0.22, 0.0),
    (0.16, 0.45),
    (0.6, 0.38),
    (0.88, 0.6),
    (0.82, 0.9),
    (0.5, 1.0),
    (0.12, 0.9),
]];
const SIX: &[Stroke] = &[&[
    (0.76, 0.0),
    (0.34, 0.3),
    (0.14, 0.7),
    (0.3, 0.96),
    (0.62, 1.0),
    (0.86, 0.76),
    (0.7, 0.5),
    (0.38, 0.5),
    (0.18, 0.68),
]];
const SEVEN: &[Stroke] = &[&[(0.08, 0.0), (0.92, 0.0), (0.38, 1.0)], &[(0.3, 0.5), (0.75, 0.5)]];
const EIGHT: &[Stroke] = &[
    &[
        (0.5, 0.0),
        (0.76, 0.1),
        (0.76, 0.36),
        (0.5, 0.46),
        (0.24, 0.36),
        (0.24, 0.1),
        (0.5, 0.0),
    ],
    &[
        (0.5, 0.46),
        (0.84, 0.6),
        (0.84, 0.88),
        (0.5, 1.0),
        (0.16, 0.88),
        (0.16, 0.6),
        (0.5, 0.46),
    ],
];
const NINE: &[Stroke] = &[
    &[
        (0.8, 0.3),
        (0.64, 0.04),
        (0.36, 0.0),
        (0.16, 0.2),
        (0.22, 0.48),
        (0.5, 0.56),
        (0.8, 0.3),
    ],
    &[(0.8, 0.3), (0.62, 1.0)],
];

const DIGITS: [&[Stroke]; 10] = [ZERO, ONE, TWO, THREE, FOUR, FIVE, SIX, SEVEN, EIGHT, NINE];

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders polylines in unit coordinates into a 28×28 sprite with an
/// anti-aliased stroke of the given half-width (pixels).
fn render(strokes: &[Stroke], half_width: f32, slant: f32) -> Glyph {
    let n = GLYPH_SIZE;
    let map = |(u, v): (f32, f32)| (6.0 + u * 16.0 + slant * (0.5 - v) * 4.0, 4.0 + v * 20.0);
    let mut data = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let p = (x as f32, y as f32);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(|w| segment_distance(p, map(w[0]), map(w[1]))))
                .fold(f32::INFINITY, f32::min);
            data[y * n + x] = (half_width + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    Glyph {
        width: n,
        height: n,
        data,
    }
}

/// Twenty stroke-drawn digits: each of 0–9 upright and slanted.
pub fn builtin_glyphs() -> Vec<Glyph> {
    let mut out = Vec::with_capacity(20);
    for (slant, width) in [(0.0, 1.4), (0.6, 1.8)] {
        out.extend(DIGITS.iter().map(|d| render(d, width, slant)));
    }
    out
}

/// Reads an IDX3 image file (magic `0x00000803`, big-endian counts).
pub fn load_idx_glyphs(path: &Path) -> Result<Vec<Glyph>> {
    let bytes = fs::read(path)?;
    parse_idx_glyphs(&bytes)
}

pub fn parse_idx_glyphs(bytes: &[u8]) -> Result<Vec<Glyph>> {
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or_else(|| Error::format(4 * i as u64, "IDX header truncated"))
    };
    if word(0)? != 0x0803 {
        return Err(Error::format(0, format!("IDX magic {:#010x}, expected 0x00000803", word(0)?)));
    }
    let (n, rows, cols) = (word(1)?, word(2)?, word(3)?);
    if rows == 0 || cols == 0 {
        return Err(Error::format(8, "IDX image extent must be positive"));
    }
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("IDX file should be {expected} bytes for {n} images of {rows}×{cols}, found {}", bytes.len()),
        ));
    }
    Ok(bytes[16..]
        .chunks_exact(rows * cols)
        .map(|c| Glyph {
            width: cols,
            height: rows,
            data: c.iter().map(|&b| b as f32 / 255.0).collect(),
        })
        .collect())
}
