//! Minimal indexed-color PNG writer.
//!
//! Writes 8-bit palette images with unfiltered rows and stored (type 0)
//! deflate blocks, which every decoder accepts. Map overlays compress
//! poorly anyway at these sizes, and staying uncompressed keeps the output
//! byte-stable and the writer dependency-free.

const SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

/// Encodes one 8-bit palette image. `pixels` are palette indices in row-major
/// order and must all reference `palette`.
pub fn encode_png_indexed(
    width: usize,
    height: usize,
    palette: &[[u8; 3]],
    pixels: &[u8],
) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count must match dimensions");
    assert!(!palette.is_empty() && palette.len() <= 256, "palette must hold 1..=256 entries");
    debug_assert!(pixels.iter().all(|&p| (p as usize) < palette.len()));

    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(width as u32).to_be_bytes());
    ihdr.extend_from_slice(&(height as u32).to_be_bytes());
    // Bit depth 8, color type 3 (indexed), default compression/filter, no
    // interlace.
    ihdr.extend_from_slice(&[8, 3, 0, 0, 0]);

    let mut plte = Vec::with_capacity(palette.len() * 3);
    for rgb in palette {
        plte.extend_from_slice(rgb);
    }

    // Each row carries a leading filter byte; 0 means raw.
    let mut raw = Vec::with_capacity(height * (width + 1));
    for row in pixels.chunks(width) {
        raw.push(0);
        raw.extend_from_slice(row);
    }

    let mut out = Vec::with_capacity(raw.len() + plte.len() + 128);
    out.extend_from_slice(&SIGNATURE);
    push_chunk(&mut out, b"IHDR", &ihdr);
    push_chunk(&mut out, b"PLTE", &plte);
    push_chunk(&mut out, b"IDAT", &zlib_stored(&raw));
    push_chunk(&mut out, b"IEND", &[]);
    out
}

fn push_chunk(out: &mut Vec<u8>, tag: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(tag);
    out.extend_from_slice(data);
    let mut crc = Crc32::new();
    crc.update(tag);
    crc.update(data);
    out.extend_from_slice(&crc.finish().to_be_bytes());
}

/// Zlib stream holding `data` in stored deflate blocks.
fn zlib_stored(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() + data.len() / 65_535 * 5 + 16);
    // 32K window, fastest compression hint, no dictionary; header checks out
    // since 0x7801 % 31 == 0.
    out.extend_from_slice(&[0x78, 0x01]);
    let mut blocks = data.chunks(65_535).peekable();
    loop {
        let block = blocks.next().unwrap_or(&[]);
        let last = blocks.peek().is_none();
        out.push(last as u8);
        out.extend_from_slice(&(block.len() as u16).to_le_bytes());
        out.extend_from_slice(&(!(block.len() as u16)).to_le_bytes());
        out.extend_from_slice(block);
        if last {
            break;
        }
    }
    out.extend_from_slice(&adler32(data).to_be_bytes());
    out
}

struct Crc32(u32);

impl Crc32 {
    fn new() -> Crc32 {
        Crc32(!0)
    }

    fn update(&mut self, data: &[u8]) {
        for &b in data {
            let c = self.0 ^ u32::from(b);
            let mut low = c & 0xFF;
            for _ in 0..8 {
                low = if low & 1 != 0 { 0xEDB8_8320 ^ (low >> 1) } else { low >> 1 };
            }
            self.0 = low ^ (c >> 8);
        }
    }

    fn finish(self) -> u32 {
        !self.0
    }
}

fn adler32(data: &[u8]) -> u32 {
    const MOD: u32 = 65_521;
    let (mut a, mut b) = (1u32, 0u32);
    // 5552 is the largest run before the sums can overflow u32.
    for chunk in data.chunks(5552) {
        for &x in chunk {
            a += u32::from(x);
            b += a;
        }
        a %= MOD;
        b %= MOD;
    }
    (b << 16) | a
}
