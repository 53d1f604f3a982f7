use std::path::Path;

use super::flo::expect_single;
use super::HeaderReader;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Single-channel little-endian PFM, rows bottom to top.
pub fn encode_pfm<T: Scalar>(map: &Tensor<T>) -> Result<Vec<u8>> {
    let s = map.shape();
    expect_single("write_pfm", s, 1)?;
    let mut out = format!("Pf\n{} {}\n-1.0\n", s.w, s.h).into_bytes();
    for y in (0..s.h).rev() {
        for x in 0..s.w {
            out.extend_from_slice(&map.at(0, 0, y, x).to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads greyscale (`Pf`) or colour (`PF`) PFM in either byte order.
pub fn decode_pfm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let bad = |msg: &str| Error::format("pfm", msg);
    let mut hdr = HeaderReader::new(bytes, false);
    let channels = match hdr.token() {
        Some("Pf") => 1,
        Some("PF") => 3,
        _ => return Err(bad("missing Pf/PF magic")),
    };
    let w: usize = hdr.number().filter(|&v| v > 0).ok_or_else(|| bad("bad width"))?;
    let h: usize = hdr.number().filter(|&v| v > 0).ok_or_else(|| bad("bad height"))?;
    let scale: f64 = hdr.number().filter(|v: &f64| *v != 0.0 && v.is_finite()).ok_or_else(|| bad("bad scale"))?;
    let payload = hdr.rest();
    if payload.len() != 4 * channels * w * h {
        return Err(bad(&format!("expected {} payload bytes, found {}", 4 * channels * w * h, payload.len())));
    }
    let mut t = Tensor::zeros(Shape::new(1, channels, h, w));
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let word: [u8; 4] = chunk.try_into().expect("four bytes");
        let v = if scale < 0.0 { f32::from_le_bytes(word) } else { f32::from_be_bytes(word) };
        let px = i / channels;
        let (row, x) = (px / w, px % w);
        *t.at_mut(0, i % channels, h - 1 - row, x) = T::of(v as f64);
    }
    Ok(t)
}

/// Writes a `(1, 1, h, w)` map.
pub fn write_pfm<T: Scalar>(path: &Path, map: &Tensor<T>) -> Result<()> {
    super::write_atomic(path, &encode_pfm(map)?)
}

pub fn read_pfm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    decode_pfm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_row_order() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![7.0, 7.0, 1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&t).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        let last_row = &bytes[bytes.len() - 8..];
        assert_eq!(last_row[..4], 7.0f32.to_le_bytes());
        assert_eq!(decode_pfm::<f32>(&bytes).unwrap(), t);
    }

    #[test]
    fn positive_scale_is_big_endian() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-3.0f32).to_be_bytes());
        let t = decode_pfm::<f32>(&bytes).unwrap();
        assert_eq!(t.data(), &[1.5, -3.0]);
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_pfm::<f32>(b"P5\n1 1\n-1.0\n\0\0\0\0").is_err());
        assert!(decode_pfm::<f32>(b"Pf\n1 x\n-1.0\n\0\0\0\0").is_err());
        assert!(decode_pfm::<f32>(b"Pf\n1 1\n0\n\0\0\0\0").is_err());
        assert!(decode_pfm::<f32>(b"Pf\n1 1\n-1.0\n\0\0\0").is_err());
    }
}
