use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::tensor::Tensor;

/// Tag at the start of every `.flo` file.
pub const FLO_MAGIC: f32 = 202_021.25;

/// Parses Middlebury `.flo` bytes: magic, width and height as little-endian
/// `i32`, then interleaved `(u, v)` pairs row by row.
pub fn parse_flo(bytes: &[u8]) -> Result<FlowField<f32>> {
    if bytes.len() < 12 {
        return Err(Error::format(bytes.len() as u64, "flow file shorter than its 12-byte header"));
    }
    let f = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    if f32::from_le_bytes(f(0)) != FLO_MAGIC {
        return Err(Error::format(0, "bad flow magic (expected 202021.25)"));
    }
    let (w, h) = (i32::from_le_bytes(f(4)), i32::from_le_bytes(f(8)));
    if w <= 0 || h <= 0 {
        return Err(Error::format(4, format!("invalid flow extent {w}×{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let need = 12 + 8 * w * h;
    if bytes.len() != need {
        return Err(Error::format(
            bytes.len().min(need) as u64,
            format!("flow file of {w}×{h} should be {need} bytes, found {}", bytes.len()),
        ));
    }
    let mut data = vec![0.0f32; 2 * w * h];
    for (i, pair) in bytes[12..].chunks_exact(8).enumerate() {
        data[i] = f32::from_le_bytes([pair[0], pair[1], pair[2], pair[3]]);
        data[w * h + i] = f32::from_le_bytes([pair[4], pair[5], pair[6], pair[7]]);
    }
    FlowField::new(Tensor::from_vec(&[2, h, w], data)?)
}

pub fn encode_flo(flow: &FlowField<f32>) -> Vec<u8> {
    let (w, h) = (flow.width(), flow.height());
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend(FLO_MAGIC.to_le_bytes());
    out.extend((w as i32).to_le_bytes());
    out.extend((h as i32).to_le_bytes());
    for (u, v) in flow.tx().iter().zip(flow.ty()) {
        out.extend(u.to_le_bytes());
        out.extend(v.to_le_bytes());
    }
    out
}

pub fn read_flo(path: &Path) -> Result<FlowField<f32>> {
    parse_flo(&fs::read(path)?)
}

pub fn write_flo(path: &Path, flow: &FlowField<f32>) -> Result<()> {
    Ok(fs::write(path, encode_flo(flow))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let flow = FlowField::from_fn(3, 2, |x, y| (x as f32 - 0.5, y as f32 * 2.0));
        let bytes = encode_flo(&flow);
        assert_eq!(bytes.len(), 12 + 48);
        assert_eq!(&bytes[..4], b"PIEH");
        let back = parse_flo(&bytes).unwrap();
        assert_eq!(back.as_tensor(), flow.as_tensor());
        assert_eq!(back.at(1, 2), (0.5, 4.0));
    }

    #[test]
    fn errors() {
        let bytes = encode_flo(&FlowField::zeros(2, 2));
        assert!(parse_flo(&bytes[..20]).unwrap_err().to_string().contains("should be 44 bytes"));
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(parse_flo(&bad).unwrap_err().to_string().contains("offset 0"));
        assert!(parse_flo(&bytes[..5]).is_err());
    }
}
