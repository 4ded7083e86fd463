//! Binary (P6) PPM frames. Frame vectors are shown as grayscale images on
//! the squarest grid that holds them exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Mat;

/// `(height, width)` with `height * width = d`, `height <= width` and
/// `height` as large as possible.
pub fn squarest_factorization(d: usize) -> (usize, usize) {
    let mut h = (d as f64).sqrt() as usize;
    while h > 1 && !d.is_multiple_of(h) {
        h -= 1;
    }
    let h = h.max(1);
    (h, d / h)
}

/// Global min-max normalization applied to every frame of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn fit<T: Scalar>(frames: &Mat<T>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in frames.as_slice() {
            let v = v.as_f64();
            min = min.min(v);
            max = max.max(v);
        }
        Self { min, max }
    }

    /// Maps `[min, max]` to `0..=255`; a constant video maps to 0.
    pub fn to_byte(&self, v: f64) -> u8 {
        let span = self.max - self.min;
        if !(span > 0.0) {
            return 0;
        }
        ((v - self.min) / span * 255.0).round().clamp(0.0, 255.0) as u8
    }

    pub fn from_byte(&self, b: u8) -> f64 {
        self.min + f64::from(b) / 255.0 * (self.max - self.min)
    }
}

pub fn frame_to_gray<T: Scalar>(frame: &[T], norm: &Normalization) -> Vec<u8> {
    frame.iter().map(|v| norm.to_byte(v.as_f64())).collect()
}

/// P6 encoding of a grayscale image (each byte replicated to R, G and B).
pub fn encode_ppm(gray: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || gray.len() != width * height {
        return Err(Error::Shape(format!(
            "{} pixels do not fill a {width}x{height} image",
            gray.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(gray.len() * 3);
    for &g in gray {
        out.extend_from_slice(&[g, g, g]);
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, gray: &[u8], width: usize, height: usize) -> Result<()> {
    std::fs::write(path, encode_ppm(gray, width, height)?)?;
    Ok(())
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("truncated PPM header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::format("non-ASCII PPM header"))
}

/// Decodes an 8-bit P6 image to `(width, height, luma)`; luma is the mean of
/// the three channels, rounded.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != "P6" {
        return Err(Error::format("not a binary PPM (P6) image"));
    }
    let mut num = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos)?
            .parse::<usize>()
            .map_err(|_| Error::format(format!("bad PPM {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(Error::format(format!("unsupported PPM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| Error::format("PPM dimensions overflow"))?;
    if w == 0 || h == 0 || bytes.len() < pos || bytes.len() - pos != need {
        return Err(Error::format("PPM raster size does not match header"));
    }
    let gray = bytes[pos..]
        .chunks_exact(3)
        .map(|p| ((u16::from(p[0]) + u16::from(p[1]) + u16::from(p[2]) + 1) / 3) as u8)
        .collect();
    Ok((w, h, gray))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_ppm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorizations() {
        assert_eq!(squarest_factorization(64), (8, 8));
        assert_eq!(squarest_factorization(8), (2, 4));
        assert_eq!(squarest_factorization(12), (3, 4));
        assert_eq!(squarest_factorization(7), (1, 7));
        assert_eq!(squarest_factorization(1), (1, 1));
    }

    #[test]
    fn normalization() {
        let n = Normalization { min: -1.0, max: 3.0 };
        assert_eq!(n.to_byte(-1.0), 0);
        assert_eq!(n.to_byte(3.0), 255);
        assert_eq!(n.to_byte(1.0), 128);
        assert_eq!(Normalization { min: 2.0, max: 2.0 }.to_byte(2.0), 0);
        let m = Mat::from_vec(2, 2, vec![0.5, -2.0, 4.0, 1.0]).unwrap();
        assert_eq!(Normalization::fit(&m), Normalization { min: -2.0, max: 4.0 });
    }

    #[test]
    fn encode_decode() {
        let gray = vec![0, 10, 20, 30, 40, 255];
        let bytes = encode_ppm(&gray, 3, 2).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert_eq!(decode_ppm(&bytes).unwrap(), (3, 2, gray));
        assert!(encode_ppm(&[1, 2], 3, 1).is_err());
    }

    #[test]
    fn decode_accepts_comments_and_rejects_garbage() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 9, 9]);
        assert_eq!(decode_ppm(&bytes).unwrap(), (1, 1, vec![9]));
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(decode_ppm(b"").is_err());
    }
}
