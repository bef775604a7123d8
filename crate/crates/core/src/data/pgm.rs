//! Binary PGM (P5) grayscale images.

use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Grayscale image with row-major pixel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("image must be at least 1x1"));
        }
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if !pixels.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Malformed(format!("PGM header: missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed(format!("PGM header: {what} out of range")))
    }
}

/// Parses a binary P5 PGM, scaling samples by `1 / maxval`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 {
        return Err(Error::Malformed("PGM header: file too short".into()));
    }
    if &bytes[..2] != b"P5" {
        return Err(Error::UnsupportedMagic(String::from_utf8_lossy(&bytes[..2]).into_owned()));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Malformed("PGM header: zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Malformed(format!("PGM header: maxval {maxval} not in 1..=65535")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::Malformed("PGM header: missing whitespace after maxval".into())),
    }
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::DimensionOverflow(format!("{width} x {height}")))?;
    let needed = count
        .checked_mul(bytes_per)
        .ok_or_else(|| Error::DimensionOverflow(format!("{width} x {height}")))?;
    let payload = &bytes[h.pos..];
    if payload.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: payload.len(),
        });
    }
    let scale = 1.0 / maxval as f64;
    let pixels = if bytes_per == 1 {
        payload[..needed].iter().map(|b| *b as f64 * scale).collect()
    } else {
        payload[..needed]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Image::new(width, height, pixels)
}

pub fn load_image_pgm(path: impl AsRef<Path>) -> Result<Image> {
    parse_pgm(&std::fs::read(path)?)
}

/// Encodes as 8-bit P5, clamping to [0, 1].
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn save_pgm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    Ok(std::fs::write(path, encode_pgm(img))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_8bit() {
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 255, 0]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!((img.width(), img.height()), (2, 2));
    }

    #[test]
    fn parses_16bit_big_endian() {
        let mut bytes = b"P5 1 1 65535 ".to_vec();
        bytes.extend_from_slice(&32768u16.to_be_bytes());
        let img = parse_pgm(&bytes).unwrap();
        assert!((img.pixels()[0] - 32768.0 / 65535.0).abs() < 1e-15);
        assert!((img.pixels()[0] - 0.50000763).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        match parse_pgm(b"P2\n2 2\n255\n0 1 1 0\n") {
            Err(e @ Error::UnsupportedMagic(_)) => assert!(e.to_string().contains("unsupported magic")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_pgm(b"P5\n2 2\n255\n\x00\x01"), Err(Error::Truncated { .. })));
        assert!(parse_pgm(b"P5\n2\n").is_err());
        assert!(parse_pgm(b"P5\n2 2 70000\n").is_err());
        assert!(parse_pgm(b"P5\n0 2 255\n").is_err());
        assert!(parse_pgm(b"P").is_err());
        assert!(parse_pgm(b"P5\n99999999999999999999999 2 255\n").is_err());
    }

    #[test]
    fn encode_then_parse() {
        let img = Image::new(3, 1, vec![0.0, 0.2, 1.0]).unwrap();
        let back = parse_pgm(&encode_pgm(&img)).unwrap();
        assert_eq!(back.pixels()[0], 0.0);
        assert!((back.pixels()[1] - 51.0 / 255.0).abs() < 1e-15);
        assert_eq!(back.pixels()[2], 1.0);
    }
}
