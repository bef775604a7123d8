//! Binary matrix blocks: 4-byte magic, u32 LE dims, row-major f64 LE payload.

use std::path::Path;

use crate::error::{Error, Result};

pub const DICTIONARY_MAGIC: [u8; 4] = *b"OSC1";
pub const WHITENING_MAGIC: [u8; 4] = *b"OSW1";
pub const PATCHES_MAGIC: [u8; 4] = *b"OSP1";
pub const MODEL_MAGIC: [u8; 4] = *b"OSM1";
pub const FEATURE_MAP_MAGIC: [u8; 4] = *b"OSF1";
pub const LAMBDA_MAGIC: [u8; 4] = *b"OSL1";
pub const HEAD_WEIGHTS_MAGIC: [u8; 4] = *b"OSH1";
pub const HEAD_BIAS_MAGIC: [u8; 4] = *b"OSB1";

fn magic_str(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("{what} = {v} does not fit in u32")))
}

#[derive(Debug, Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn magic(&mut self, magic: &[u8; 4]) -> &mut Self {
        self.buf.extend_from_slice(magic);
        self
    }

    pub fn dim(&mut self, v: usize, what: &str) -> Result<&mut Self> {
        self.buf.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
        Ok(self)
    }

    pub fn values(&mut self, values: impl IntoIterator<Item = f64>) -> &mut Self {
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    /// Magic, rows, cols and `rows × cols` row-major values.
    pub fn matrix_block(
        &mut self,
        magic: &[u8; 4],
        rows: usize,
        cols: usize,
        row_major: impl IntoIterator<Item = f64>,
    ) -> Result<&mut Self> {
        self.magic(magic);
        self.dim(rows, "rows")?;
        self.dim(cols, "cols")?;
        Ok(self.values(row_major))
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(Error::Truncated {
                needed: len,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let available = self.bytes.len() - self.pos;
        let found = &self.bytes[self.pos..self.pos + available.min(4)];
        if found != expected {
            return Err(Error::BadMagic {
                expected: magic_str(expected),
                found: magic_str(found),
            });
        }
        self.pos += 4;
        Ok(())
    }

    pub fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    /// Reads `count` f64 values after checking the payload is present, so a
    /// corrupt header cannot trigger a huge allocation.
    pub fn values(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| Error::DimensionOverflow(format!("{count} values")))?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    /// Reads a matrix block, returning `(rows, cols, row-major values)`.
    pub fn matrix_block(&mut self, magic: &[u8; 4]) -> Result<(usize, usize, Vec<f64>)> {
        self.magic(magic)?;
        let rows = self.u32()?;
        let cols = self.u32()?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::DimensionOverflow(format!("{rows} x {cols}")))?;
        Ok((rows, cols, self.values(count)?))
    }

    pub fn finish(self) -> Result<()> {
        let rest = self.bytes.len() - self.pos;
        if rest != 0 {
            return Err(Error::Malformed(format!("{rest} trailing bytes")));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(path)?)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    Ok(std::fs::write(path, bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_round_trip() {
        let mut w = Writer::new();
        w.matrix_block(b"TEST", 2, 3, [1.0, 2.0, 3.0, 4.0, 5.0, -0.0]).unwrap();
        let bytes = w.finish();
        assert_eq!(bytes.len(), 4 + 8 + 48);
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        let mut r = Reader::new(&bytes);
        let (rows, cols, vals) = r.matrix_block(b"TEST").unwrap();
        assert_eq!((rows, cols), (2, 3));
        assert_eq!(vals[5].to_bits(), (-0.0f64).to_bits());
        r.finish().unwrap();
    }

    #[test]
    fn header_errors() {
        let mut r = Reader::new(b"OSX1");
        match r.magic(b"OSC1") {
            Err(Error::BadMagic { expected, found }) => {
                assert_eq!(expected, "OSC1");
                assert_eq!(found, "OSX1");
            }
            other => panic!("{other:?}"),
        }
        let mut bytes = b"OSC1".to_vec();
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(Reader::new(&bytes).matrix_block(b"OSC1").is_err());
        assert!(matches!(Reader::new(b"OS").magic(b"OSC1"), Err(Error::BadMagic { .. })));
    }
}
