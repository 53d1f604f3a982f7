use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// First four bytes of every `.flo` file, as a little-endian float.
pub const FLO_MAGIC: f32 = 202021.25;

pub(crate) fn expect_single(op: &'static str, t: Shape, channels: usize) -> Result<()> {
    if t.n != 1 || t.c != channels {
        return Err(Error::invalid(op, format!("expected 1x{channels}xHxW, got {t}")));
    }
    Ok(())
}

pub fn encode_flo<T: Scalar>(flow: &Tensor<T>) -> Result<Vec<u8>> {
    let s = flow.shape();
    expect_single("write_flo", s, 2)?;
    let mut out = Vec::with_capacity(12 + 8 * s.plane());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(s.w as i32).to_le_bytes());
    out.extend_from_slice(&(s.h as i32).to_le_bytes());
    let (u, v) = (flow.plane(0, 0), flow.plane(0, 1));
    for (a, b) in u.iter().zip(v) {
        out.extend_from_slice(&(a.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
        out.extend_from_slice(&(b.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flo<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let bad = |msg: &str| Error::format("flo", msg);
    if bytes.len() < 12 {
        return Err(bad("truncated header"));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[i..i + 4]).expect("four bytes");
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(bad("bad magic"));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(bad("non-positive dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    let payload = &bytes[12..];
    if payload.len() != 8 * w * h {
        return Err(bad(&format!("expected {} payload bytes, found {}", 8 * w * h, payload.len())));
    }
    let mut data = vec![T::zero(); 2 * w * h];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("four bytes"));
        data[(i % 2) * w * h + i / 2] = T::of(v as f64);
    }
    Tensor::from_vec(Shape::new(1, 2, h, w), data)
}

/// Writes a `(1, 2, h, w)` flow field in pixels.
pub fn write_flo<T: Scalar>(path: &Path, flow: &Tensor<T>) -> Result<()> {
    super::write_atomic(path, &encode_flo(flow)?)
}

pub fn read_flo<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    decode_flo(&std::fs::read(path)?)
}
