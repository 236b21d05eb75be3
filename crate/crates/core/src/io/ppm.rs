//! Binary PPM (P6, maxval 255) images.

use crate::error::{PrismError, Result};
use crate::overlay::RgbMapBatch;
use crate::tensor::{Shape4, Tensor4};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PrismError::BadHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| PrismError::BadHeader(format!("{what} is not ASCII")))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token(what)?;
        tok.parse()
            .map_err(|_| PrismError::BadHeader(format!("{what} '{tok}' is not a number")))
    }
}

/// Decodes a P6 image to shape `(1, 3, H, W)` with values `byte / 255`.
pub fn read_image_ppm(bytes: &[u8]) -> Result<Tensor4> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token("magic number")?;
    if magic != "P6" {
        return Err(PrismError::BadHeader(format!(
            "expected 'P6', found '{magic}'"
        )));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PrismError::BadHeader(format!(
            "empty image {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(PrismError::BadHeader(format!(
            "maxval {maxval} is unsupported; only 255 is accepted"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PrismError::BadHeader("no whitespace after maxval".into()));
    }
    let raster = &bytes[cur.pos + 1..];
    let plane = width * height;
    if raster.len() < plane * 3 {
        return Err(PrismError::TruncatedPixels {
            expected: plane * 3,
            found: raster.len(),
        });
    }
    let mut data = vec![0.0f32; plane * 3];
    for (p, px) in raster[..plane * 3].chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + p] = px[ch] as f32 / 255.0;
        }
    }
    Tensor4::new(Shape4::new(1, 3, height, width), data)
}

/// Quantizes a `[0, 1]` value to a byte, rounding half away from zero.
/// Out-of-range values are clamped first.
pub fn quantize(value: f32) -> u8 {
    (value.clamp(0.0, 1.0) as f64 * 255.0).round() as u8
}

/// Encodes batch item `index` of a 3-channel tensor as P6.
pub fn encode_ppm(t: &Tensor4, index: usize) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.c != 3 {
        return Err(PrismError::ShapeMismatch(format!(
            "ppm needs 3 channels, got shape {s}"
        )));
    }
    if index >= s.n {
        return Err(PrismError::ShapeMismatch(format!(
            "image index {index} out of range for batch of {}",
            s.n
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    let (r, g, b) = (t.plane(index, 0), t.plane(index, 1), t.plane(index, 2));
    out.reserve(s.plane() * 3);
    for p in 0..s.plane() {
        out.extend_from_slice(&[quantize(r[p]), quantize(g[p]), quantize(b[p])]);
    }
    Ok(out)
}

pub fn write_image_ppm(maps: &RgbMapBatch, index: usize) -> Result<Vec<u8>> {
    encode_ppm(maps.maps(), index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel_round_trip() {
        let bytes = b"P6\n1 1\n255\n\xff\xff\xff".to_vec();
        let t = read_image_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape4::new(1, 3, 1, 1));
        assert_eq!(t.data(), &[1.0, 1.0, 1.0]);
        assert_eq!(encode_ppm(&t, 0).unwrap(), bytes);
    }

    #[test]
    fn half_rounds_away_from_zero() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(1.5), 255);
    }

    #[test]
    fn header_with_comments() {
        let bytes = b"P6 # made by hand\n2 1 # size\n255\n\x00\x01\x02\x03\x04\x05".to_vec();
        let t = read_image_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape4::new(1, 3, 1, 2));
        assert_eq!(t.get(0, 2, 0, 1), 5.0 / 255.0);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            read_image_ppm(b"P3\n1 1\n255\n"),
            Err(PrismError::BadHeader(_))
        ));
        assert!(matches!(
            read_image_ppm(b"P6\n1 1\n65535\n"),
            Err(PrismError::BadHeader(_))
        ));
        assert!(matches!(
            read_image_ppm(b"P6\n1\n"),
            Err(PrismError::BadHeader(_))
        ));
        assert!(matches!(
            read_image_ppm(b"P6\n2 2\n255\n\x00\x00\x00"),
            Err(PrismError::TruncatedPixels {
                expected: 12,
                found: 3
            })
        ));
    }

    #[test]
    fn writer_layout() {
        let t = Tensor4::new(Shape4::new(1, 3, 1, 2), vec![1.0, 0.0, 0.5, 0.0, 0.0, 1.0]).unwrap();
        let bytes = encode_ppm(&t, 0).unwrap();
        assert_eq!(bytes, b"P6\n2 1\n255\n\xff\x80\x00\x00\x00\xff".to_vec());
        assert!(encode_ppm(&t, 1).is_err());
    }
}
