use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::glyphs::{builtin_glyphs, Glyph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MovingMnistSpec {
    /// Side of the square canvas.
    pub canvas: usize,
    pub digits: usize,
    pub seq_len: usize,
    /// Speed range in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    pub seed: u64,
}

impl Default for MovingMnistSpec {
    fn default() -> Self {
        MovingMnistSpec {
            canvas: 64,
            digits: 2,
            seq_len: 20,
            speed_min: 2.0,
            speed_max: 5.0,
            seed: 0,
        }
    }
}

impl MovingMnistSpec {
    fn validate(&self, glyphs: &[Glyph]) -> Result<()> {
        if glyphs.is_empty() {
            return Err(Error::InvalidArgument("no glyphs to draw from".into()));
        }
        if let Some(g) = glyphs.iter().find(|g| g.width > self.canvas || g.height > self.canvas) {
            return Err(Error::InvalidArgument(format!(
                "glyph of {}×{} does not fit a {}-pixel canvas",
                g.width, g.height, self.canvas
            )));
        }
        if self.digits == 0 || self.seq_len == 0 {
            return Err(Error::InvalidArgument("digits and sequence length must be positive".into()));
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid speed range [{}, {}]",
                self.speed_min, self.speed_max
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sequence `index` of a dataset generated from `seed`.
pub fn sequence_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// Advances one coordinate by `velocity`, reflecting off `[0, limit]`.
pub fn bounce_step(position: f64, velocity: f64, limit: f64) -> (f64, f64) {
    let mut p = position + velocity;
    let mut v = velocity;
    if p < 0.0 {
        p = -p;
        v = -v;
    } else if p > limit {
        p = 2.0 * limit - p;
        v = -v;
    }
    (p.clamp(0.0, limit), v)
}

/// One moving digit: glyph index and per-frame top-left positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub glyph: usize,
    pub positions: Vec<(f64, f64)>,
}

/// Draws the digit trajectories of sequence `index`.
pub fn tracks(spec: &MovingMnistSpec, glyphs: &[Glyph], index: u64) -> Result<Vec<Track>> {
    spec.validate(glyphs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed(spec.seed, index));
    let mut out = Vec::with_capacity(spec.digits);
    for _ in 0..spec.digits {
        let glyph = rng.gen_range(0..glyphs.len());
        let (lx, ly) = (
            (spec.canvas - glyphs[glyph].width) as f64,
            (spec.canvas - glyphs[glyph].height) as f64,
        );
        let mut x = rng.gen::<f64>() * lx;
        let mut y = rng.gen::<f64>() * ly;
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let speed = spec.speed_min + rng.gen::<f64>() * (spec.speed_max - spec.speed_min);
        let (mut vx, mut vy) = (speed * angle.cos(), speed * angle.sin());
        let mut positions = Vec::with_capacity(spec.seq_len);
        for _ in 0..spec.seq_len {
            positions.push((x, y));
            (x, vx) = bounce_step(x, vx, lx);
            (y, vy) = bounce_step(y, vy, ly);
        }
        out.push(Track { glyph, positions });
    }
    Ok(out)
}

/// Renders sequence `index` as `seq_len` frames of `canvas²` values in
/// `[0, 1]`; overlapping digits combine by per-pixel maximum.
pub fn render_sequence(spec: &MovingMnistSpec, glyphs: &[Glyph], index: u64) -> Result<Vec<Vec<f32>>> {
    let tracks = tracks(spec, glyphs, index)?;
    let n = spec.canvas;
    let mut frames = vec![vec![0.0f32; n * n]; spec.seq_len];
    for track in &tracks {
        let g = &glyphs[track.glyph];
        for (frame, &(x, y)) in frames.iter_mut().zip(&track.positions) {
            let (ox, oy) = (x.round() as usize, y.round() as usize);
            for gy in 0..g.height {
                let row = &mut frame[(oy + gy) * n + ox..][..g.width];
                for (dst, &v) in row.iter_mut().zip(&g.data[gy * g.width..(gy + 1) * g.width]) {
                    *dst = dst.max(v);
                }
            }
        }
    }
    Ok(frames)
}

/// Quantises `[0, 1]` to bytes.
pub fn to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Sequence `index` packed frame-major for a dataset file.
pub fn sequence_bytes(spec: &MovingMnistSpec, glyphs: &[Glyph], index: u64) -> Result<Vec<u8>> {
    Ok(render_sequence(spec, glyphs, index)?.iter().flat_map(|f| to_bytes(f)).collect())
}

/// The default setup shrunk to a `canvas`-pixel square: glyphs max-pooled
/// and speeds divided by `64 / canvas`. Frames are `1 × canvas × canvas`.
pub fn scaled_sequence(canvas: usize, seq_len: usize, seed: u64, index: u64) -> Result<Vec<Tensor<f32>>> {
    let factor = (64 / canvas.max(1)).max(1);
    let spec = MovingMnistSpec {
        canvas,
        seq_len,
        speed_min: 2.0 / factor as f64,
        speed_max: 5.0 / factor as f64,
        seed,
        ..MovingMnistSpec::default()
    };
    let glyphs: Vec<Glyph> = builtin_glyphs().iter().map(|g| g.downsample(factor)).collect();
    render_sequence(&spec, &glyphs, index)?
        .into_iter()
        .map(|f| Tensor::from_vec(&[1, canvas, canvas], f))
        .collect()
}
