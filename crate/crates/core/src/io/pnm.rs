use std::path::Path;

use super::flo::expect_single;
use super::HeaderReader;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn quantize<T: Scalar>(v: T) -> u8 {
    (v.as_f64() * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn encode<T: Scalar>(t: &Tensor<T>, magic: &str, channels: usize, op: &'static str) -> Result<Vec<u8>> {
    let s = t.shape();
    expect_single(op, s, channels)?;
    let mut out = format!("{magic}\n{} {}\n255\n", s.w, s.h).into_bytes();
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..channels {
                out.push(quantize(t.at(0, c, y, x)));
            }
        }
    }
    Ok(out)
}

fn decode<T: Scalar>(bytes: &[u8], magic: &str, channels: usize, format: &'static str) -> Result<Tensor<T>> {
    let bad = |msg: String| Error::format(format, msg);
    let mut hdr = HeaderReader::new(bytes, true);
    match hdr.token() {
        Some(m) if m == magic => {}
        Some(m) => return Err(bad(format!("unsupported variant {m:?}, expected {magic}"))),
        None => return Err(bad("empty file".into())),
    }
    let w: usize = hdr.number().filter(|&v| v > 0).ok_or_else(|| bad("bad width".into()))?;
    let h: usize = hdr.number().filter(|&v| v > 0).ok_or_else(|| bad("bad height".into()))?;
    let maxval: u32 = hdr.number().filter(|&v| v > 0 && v < 256).ok_or_else(|| bad("maxval must be 1..=255".into()))?;
    let payload = hdr.rest();
    let n = channels * w * h;
    if payload.len() < n {
        return Err(bad(format!("expected {n} payload bytes, found {}", payload.len())));
    }
    let mut t = Tensor::zeros(Shape::new(1, channels, h, w));
    let scale = 1.0 / maxval as f64;
    for (i, &b) in payload[..n].iter().enumerate() {
        let px = i / channels;
        *t.at_mut(0, i % channels, px / w, px % w) = T::of(b as f64 * scale);
    }
    Ok(t)
}

/// Binary P6 with maxval 255, rounding half up.
pub fn encode_ppm<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    encode(image, "P6", 3, "write_ppm")
}

pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    decode(bytes, "P6", 3, "ppm")
}

/// Binary P5 with maxval 255; 255 means visible.
pub fn encode_pgm<T: Scalar>(map: &Tensor<T>) -> Result<Vec<u8>> {
    encode(map, "P5", 1, "write_pgm")
}

pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    decode(bytes, "P5", 1, "pgm")
}

/// Writes a `(1, 3, h, w)` image with values in `[0, 1]`.
pub fn write_ppm<T: Scalar>(path: &Path, image: &Tensor<T>) -> Result<()> {
    super::write_atomic(path, &encode_ppm(image)?)
}

pub fn read_ppm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    decode_ppm(&std::fs::read(path)?)
}

/// Writes a `(1, 1, h, w)` map with values in `[0, 1]`.
pub fn write_pgm<T: Scalar>(path: &Path, map: &Tensor<T>) -> Result<()> {
    super::write_atomic(path, &encode_pgm(map)?)
}

pub fn read_pgm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    decode_pgm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_pixel_bytes() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, 0.0, 0.0]).unwrap();
        let bytes = encode_ppm(&t).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[255, 0, 0]);
    }

    #[test]
    fn pgm_rounds_half_up() {
        let t = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, 1.0, 0.0]).unwrap();
        let bytes = encode_pgm(&t).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[128, 255, 0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let t = decode_pgm::<f32>(b"P5\n# made by hand\n2 1 # size\n255\n\x00\xff").unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
    }

    #[test]
    fn ascii_variant_rejected() {
        assert!(decode_ppm::<f32>(b"P3\n1 1\n255\n255 0 0\n").is_err());
        assert!(decode_ppm::<f32>(b"P6\n1 1\n255\n\x00").is_err());
        assert!(decode_pgm::<f32>(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}
