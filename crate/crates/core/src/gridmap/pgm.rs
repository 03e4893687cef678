//! Netpbm grayscale (PGM) reader and writer.
//!
//! Reads both ASCII `P2` and binary `P5`, with `#` comments anywhere in the
//! header and maxval up to 65535 (two-byte big-endian samples in `P5`).
//! Writes canonical `P5` at maxval 255, which round-trips byte-exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gridmap::OccupancyGrid;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(c) = self.peek() {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<u32> {
        self.skip_separators();
        let start = self.pos;
        let mut val: u64 = 0;
        let mut any = false;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() {
                any = true;
                val = val * 10 + u64::from(b - b'0');
                if val > u64::from(u32::MAX) {
                    return Err(Error::format(format!("{what} out of range"), start));
                }
                self.pos += 1;
            } else {
                break;
            }
        }
        if !any {
            return Err(Error::format(format!("expected {what}"), self.pos));
        }
        Ok(val as u32)
    }
}

/// Parses PGM bytes into an occupancy grid with intensities scaled to [0, 1].
pub fn parse_pgm(bytes: &[u8]) -> Result<OccupancyGrid> {
    let mut cur = Cursor::new(bytes);
    cur.skip_separators();
    let magic_at = cur.pos;
    if bytes.len() < cur.pos + 2 {
        return Err(Error::format("missing PGM magic", magic_at));
    }
    let magic = &bytes[cur.pos..cur.pos + 2];
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        _ => return Err(Error::format("not a PGM file (expected P2 or P5)", magic_at)),
    };
    cur.pos += 2;

    let width = cur.next_uint("width")? as usize;
    let height = cur.next_uint("height")? as usize;
    let maxval_at = cur.pos;
    let maxval = cur.next_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("zero image dimension", magic_at));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("maxval {maxval} out of range 1..=65535"), maxval_at));
    }

    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("image dimensions overflow", magic_at))?;
    let mut cells = Vec::with_capacity(count);

    if binary {
        // Exactly one whitespace byte separates the header from raster data.
        match cur.peek() {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(Error::format("expected single whitespace before raster", cur.pos)),
        }
        let wide = maxval > 255;
        let sample_len = if wide { 2 } else { 1 };
        let need = count * sample_len;
        if bytes.len() - cur.pos < need {
            return Err(Error::format(
                format!("raster truncated: need {need} bytes, have {}", bytes.len() - cur.pos),
                bytes.len(),
            ));
        }
        for i in 0..count {
            let at = cur.pos + i * sample_len;
            let v = if wide {
                u32::from(bytes[at]) << 8 | u32::from(bytes[at + 1])
            } else {
                u32::from(bytes[at])
            };
            if v > maxval {
                return Err(Error::format(format!("sample {v} exceeds maxval {maxval}"), at));
            }
            cells.push(f64::from(v) / f64::from(maxval));
        }
    } else {
        for _ in 0..count {
            let at = cur.pos;
            let v = cur.next_uint("sample")?;
            if v > maxval {
                return Err(Error::format(format!("sample {v} exceeds maxval {maxval}"), at));
            }
            cells.push(f64::from(v) / f64::from(maxval));
        }
    }

    OccupancyGrid::new(width, height, cells)
}

/// Encodes as canonical binary PGM (`P5`, maxval 255, single-newline header).
pub fn encode_pgm(grid: &OccupancyGrid) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", grid.width, grid.height);
    let mut out = Vec::with_capacity(header.len() + grid.cells().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(grid.cells().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<OccupancyGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

pub fn save_pgm(grid: &OccupancyGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(grid)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ascii_and_binary_identically() {
        let p2 = b"P2\n# comment\n3 2\n255\n0 128 255\n255 128 0\n";
        let mut p5: Vec<u8> = b"P5\n3 2\n255\n".to_vec();
        p5.extend_from_slice(&[0, 128, 255, 255, 128, 0]);
        let a = parse_pgm(p2).unwrap();
        let b = parse_pgm(&p5).unwrap();
        assert_eq!(a.width, 3);
        assert_eq!(a.height, 2);
        assert_eq!(a.cells(), b.cells());
        assert_eq!(a.cells()[0], 0.0);
        assert_eq!(a.cells()[2], 1.0);
    }

    #[test]
    fn sixteen_bit_samples_scale_by_maxval() {
        let mut p5: Vec<u8> = b"P5\n1 1\n65535\n".to_vec();
        p5.extend_from_slice(&[0x80, 0x00]);
        let g = parse_pgm(&p5).unwrap();
        assert!((g.cells()[0] - f64::from(0x8000u16) / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn binary_roundtrip_is_byte_exact() {
        let mut p5: Vec<u8> = b"P5\n4 3\n255\n".to_vec();
        p5.extend_from_slice(&[0, 10, 20, 30, 40, 50, 128, 200, 255, 7, 9, 11]);
        let g = parse_pgm(&p5).unwrap();
        assert_eq!(encode_pgm(&g), p5);
    }

    #[test]
    fn errors_carry_byte_offsets() {
        let err = parse_pgm(b"P7\n1 1\n255\n").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }

        let mut truncated: Vec<u8> = b"P5\n4 4\n255\n".to_vec();
        truncated.extend_from_slice(&[1, 2, 3]);
        let err = parse_pgm(&truncated).unwrap_err();
        assert_eq!(err.kind(), "format");
        assert!(err.to_string().contains("truncated"), "{err}");

        let err = parse_pgm(b"P2\n2 2\n0\n0 0 0 0\n").unwrap_err();
        assert!(err.to_string().contains("maxval"), "{err}");
    }

    #[test]
    fn sample_above_maxval_rejected() {
        let err = parse_pgm(b"P2\n1 1\n100\n101\n").unwrap_err();
        assert_eq!(err.kind(), "format");
    }
}
