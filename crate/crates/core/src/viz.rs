//! Colour coding of flow fields and PNG output.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tensor::{Scalar, Tensor};

/// Segment lengths of the colour wheel: red→yellow, yellow→green,
/// green→cyan, cyan→blue, blue→magenta, magenta→red.
pub const WHEEL_SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];
pub const WHEEL_LEN: usize = 55;

/// The 55 wheel entries as RGB in `[0, 255]`.
pub fn color_wheel() -> Vec<[u8; 3]> {
    let ramp = |i: usize, n: usize| (255 * i / n) as u8;
    let [ry, yg, gc, cb, bm, mr] = WHEEL_SEGMENTS;
    let mut wheel = Vec::with_capacity(WHEEL_LEN);
    wheel.extend((0..ry).map(|i| [255, ramp(i, ry), 0]));
    wheel.extend((0..yg).map(|i| [255 - ramp(i, yg), 255, 0]));
    wheel.extend((0..gc).map(|i| [0, 255, ramp(i, gc)]));
    wheel.extend((0..cb).map(|i| [0, 255 - ramp(i, cb), 255]));
    wheel.extend((0..bm).map(|i| [ramp(i, bm), 0, 255]));
    wheel.extend((0..mr).map(|i| [255, 0, 255 - ramp(i, mr)]));
    wheel
}

/// Fractional wheel index of direction `(u, v)`, in `[0, WHEEL_LEN − 1]`.
pub fn wheel_position(u: f64, v: f64) -> f64 {
    let a = (-v).atan2(-u) / PI;
    (a + 1.0) / 2.0 * (WHEEL_LEN - 1) as f64
}

/// Colour in `[0, 1]³` of a flow vector already divided by the maximum
/// magnitude. Inside the unit disc the wheel colour is blended with white by
/// the radius; outside it is darkened.
pub fn flow_color(wheel: &[[u8; 3]], u: f64, v: f64) -> [f64; 3] {
    let rad = (u * u + v * v).sqrt();
    let fk = wheel_position(u, v);
    let k0 = fk.floor() as usize % WHEEL_LEN;
    let k1 = (k0 + 1) % WHEEL_LEN;
    let f = fk - fk.floor();
    let mut out = [0.0; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let c0 = wheel[k0][ch] as f64 / 255.0;
        let c1 = wheel[k1][ch] as f64 / 255.0;
        let col = (1.0 - f) * c0 + f * c1;
        *o = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
    }
    out
}

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn enlarge(&self, factor: usize) -> RgbImage {
        let f = factor.max(1);
        let (w, h) = (self.width * f, self.height * f);
        let mut data = Vec::with_capacity(3 * w * h);
        for y in 0..h {
            for x in 0..w {
                data.extend(self.pixel(x / f, y / f));
            }
        }
        RgbImage { width: w, height: h, data }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(png_error)?;
            writer.write_image_data(&self.data).map_err(png_error)?;
        }
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_error)?;
        writer.write_image_data(&self.data).map_err(png_error)?;
        Ok(())
    }
}

fn png_error(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("png encoding: {other}")),
    }
}

/// Colour-codes a flow field. `max_magnitude = None` scales by the largest
/// vector in the field.
pub fn flow_to_image<T: Scalar>(flow: &FlowField<T>, max_magnitude: Option<f64>) -> RgbImage {
    let wheel = color_wheel();
    let to64 = |v: T| v.to_f64().unwrap_or(0.0);
    let (tx, ty) = (flow.tx(), flow.ty());
    let max = max_magnitude.unwrap_or_else(|| {
        tx.iter().zip(ty).map(|(&u, &v)| to64(u).hypot(to64(v))).fold(0.0, f64::max)
    });
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let mut data = Vec::with_capacity(3 * tx.len());
    for (&u, &v) in tx.iter().zip(ty) {
        let c = flow_color(&wheel, to64(u) * scale, to64(v) * scale);
        data.extend(c.map(|x| (255.0 * x).floor().clamp(0.0, 255.0) as u8));
    }
    RgbImage { width: flow.width(), height: flow.height(), data }
}

/// Grey-level image of a single-channel `[0, 1]` frame.
pub fn frame_to_image<T: Scalar>(frame: &Tensor<T>) -> Result<RgbImage> {
    let s = frame.shape();
    let (h, w) = match s {
        [1, h, w] | [h, w] => (*h, *w),
        _ => return Err(Error::shape("frame image", "1×h×w", s)),
    };
    let data = frame
        .data()
        .iter()
        .flat_map(|&v| {
            let b = (v.to_f64().unwrap_or(0.0).clamp(0.0, 1.0) * 255.0).round() as u8;
            [b, b, b]
        })
        .collect();
    Ok(RgbImage { width: w, height: h, data })
}
