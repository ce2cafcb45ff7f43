use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A binary (P5) graymap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Pgm {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(Error::format(0, "not a binary PGM (expected \"P5\")"));
        }
        let mut pos = 2;
        let mut field = |name: &str| -> Result<usize> {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(start as u64, format!("expected PGM {name}")))
        };
        let width = field("width")?;
        let height = field("height")?;
        let maxval = field("maxval")?;
        if !(1..=65535).contains(&maxval) || width == 0 || height == 0 {
            return Err(Error::format(pos as u64, format!("invalid PGM header {width}×{height}, maxval {maxval}")));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::format(pos as u64, "missing whitespace after PGM header"));
        }
        pos += 1;
        let sample = if maxval < 256 { 1 } else { 2 };
        let need = width * height * sample;
        let raster = &bytes[pos..];
        if raster.len() < need {
            return Err(Error::format(
                bytes.len() as u64,
                format!("PGM raster needs {need} bytes after offset {pos}, found {}", raster.len()),
            ));
        }
        let data = if sample == 1 {
            raster[..need].iter().map(|&b| b as u16).collect()
        } else {
            raster[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        };
        let pgm = Pgm {
            width,
            height,
            maxval: maxval as u16,
            data,
        };
        if let Some(i) = pgm.data.iter().position(|&v| v > pgm.maxval) {
            return Err(Error::format((pos + i * sample) as u64, "PGM sample exceeds maxval"));
        }
        Ok(pgm)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.data.iter().map(|&v| v as u8));
        } else {
            out.extend(self.data.iter().flat_map(|v| v.to_be_bytes()));
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.encode())?)
    }

    /// `1 × H × W` in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let m = self.maxval as f32;
        Tensor::from_vec(&[1, self.height, self.width], self.data.iter().map(|&v| v as f32 / m).collect())
            .expect("raster size")
    }

    /// Quantises a single-channel image in `[0, 1]`.
    pub fn from_tensor(image: &Tensor<f32>, maxval: u16) -> Result<Self> {
        let s = image.shape();
        if s.len() != 3 || s[0] != 1 {
            return Err(Error::shape("PGM image (1 × H × W)", [1, 0, 0], s));
        }
        let m = maxval as f32;
        Ok(Pgm {
            width: s[2],
            height: s[1],
            maxval,
            data: image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * m).round() as u16).collect(),
        })
    }
}

fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Frames of a directory of numbered `.pgm` files, ordered by the trailing
/// number in the file name.
pub fn load_pgm_sequence(dir: &Path) -> Result<Vec<Tensor<f32>>> {
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            let n = frame_number(&path).ok_or_else(|| {
                Error::InvalidArgument(format!("frame file {} has no trailing frame number", path.display()))
            })?;
            files.push((n, path));
        }
    }
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .pgm frames in {}", dir.display())));
    }
    files.sort();
    let mut frames = Vec::with_capacity(files.len());
    for (_, path) in &files {
        let t = Pgm::read(path)?.to_tensor();
        if let Some(first) = frames.first() {
            let first: &Tensor<f32> = first;
            t.expect_shape(&format!("frame {}", path.display()), first.shape())?;
        }
        frames.push(t);
    }
    Ok(frames)
}
