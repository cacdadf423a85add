//! Block-DCT grayscale codec used as the conventional image-transmission
//! baseline: 8x8 orthonormal DCT-II, quality-scaled quantization, zigzag
//! scan, and (run, level) pairs coded with order-0 Exp-Golomb.
//!
//! Stream layout (little-endian):
//!
//! ```text
//! "SCIM" | width u16 | height u16 | quality u8 | block count u16 |
//!   { bit length u16 | ceil(bits/8) bytes, zero-padded } * blocks
//! ```
//!
//! Each block carries its own bit length, so a damaged block never
//! desynchronizes its neighbours.

use std::sync::OnceLock;

use crate::dataset::Image;
use crate::rng::round_half_away;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SCIM";
pub const HEADER_BYTES: usize = 11;

/// Conventional 8x8 luminance quantization table.
#[rustfmt::skip]
pub const QBASE: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

/// Run code value that, followed by a zero level, ends a block.
const EOB_RUN: u32 = 63;

pub type Block = [[f64; 8]; 8];

/// Effective quantization matrix for `quality` in `[1, 100]`.
pub fn quant_matrix(quality: u8) -> Result<[[u16; 8]; 8]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!("quality must lie in [1, 100], got {quality}")));
    }
    let q = f64::from(quality);
    let scale = if quality < 50 { 5000.0 / q } else { 200.0 - 2.0 * q } / 100.0;
    let mut m = [[0u16; 8]; 8];
    for (row, base) in m.iter_mut().zip(QBASE.iter()) {
        for (v, &b) in row.iter_mut().zip(base) {
            *v = round_half_away(f64::from(b) * scale).clamp(1.0, 255.0) as u16;
        }
    }
    Ok(m)
}

fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        c
    })
}

/// Orthonormal 2-D DCT-II.
pub fn dct8x8(block: &Block) -> Block {
    let c = dct_basis();
    let mut tmp = [[0.0; 8]; 8];
    for u in 0..8 {
        for y in 0..8 {
            tmp[u][y] = (0..8).map(|x| c[u][x] * block[y][x]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for v in 0..8 {
        for u in 0..8 {
            out[v][u] = (0..8).map(|y| c[v][y] * tmp[u][y]).sum();
        }
    }
    out
}

/// Inverse of [`dct8x8`].
pub fn idct8x8(coeffs: &Block) -> Block {
    let c = dct_basis();
    let mut tmp = [[0.0; 8]; 8];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y][u] = (0..8).map(|v| c[v][y] * coeffs[v][u]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for y in 0..8 {
        for x in 0..8 {
            out[y][x] = (0..8).map(|u| c[u][x] * tmp[y][u]).sum();
        }
    }
    out
}

/// `(row, col)` visited at each zigzag position.
pub fn zigzag_order() -> &'static [(usize, usize); 64] {
    static ORDER: OnceLock<[(usize, usize); 64]> = OnceLock::new();
    ORDER.get_or_init(|| {
        let mut order = [(0, 0); 64];
        let mut i = 0;
        for s in 0..15usize {
            let rows: Vec<usize> = (s.saturating_sub(7)..=s.min(7)).collect();
            let it: Box<dyn Iterator<Item = &usize>> = if s % 2 == 0 {
                Box::new(rows.iter().rev())
            } else {
                Box::new(rows.iter())
            };
            for &r in it {
                order[i] = (r, s - r);
                i += 1;
            }
        }
        order
    })
}

pub fn zigzag<T: Copy + Default>(block: &[[T; 8]; 8]) -> [T; 64] {
    let mut out = [T::default(); 64];
    for (o, &(r, c)) in out.iter_mut().zip(zigzag_order()) {
        *o = block[r][c];
    }
    out
}

pub fn unzigzag<T: Copy + Default>(seq: &[T; 64]) -> [[T; 8]; 8] {
    let mut out = [[T::default(); 8]; 8];
    for (&v, &(r, c)) in seq.iter().zip(zigzag_order()) {
        out[r][c] = v;
    }
    out
}

/// MSB-first bit sink.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bits: Vec<u8>,
}

impl BitWriter {
    pub fn put(&mut self, value: u64, len: u32) {
        for i in (0..len).rev() {
            self.bits.push(((value >> i) & 1) as u8);
        }
    }

    /// Order-0 unsigned Exp-Golomb.
    pub fn put_ue(&mut self, n: u32) {
        let m = u64::from(n) + 1;
        let len = 64 - m.leading_zeros();
        self.put(0, len - 1);
        self.put(m, len);
    }

    pub fn put_se(&mut self, n: i32) {
        self.put_ue(signed_to_unsigned(n));
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }
}

pub struct BitReader<'a> {
    bits: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bits: &'a [u8]) -> Self {
        BitReader { bits, pos: 0 }
    }

    fn bit(&mut self) -> Option<u8> {
        let b = *self.bits.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    pub fn get_ue(&mut self) -> Option<u32> {
        let mut zeros = 0u32;
        while self.bit()? == 0 {
            zeros += 1;
            if zeros > 31 {
                return None;
            }
        }
        let mut m = 1u64;
        for _ in 0..zeros {
            m = (m << 1) | u64::from(self.bit()?);
        }
        u32::try_from(m - 1).ok()
    }

    pub fn get_se(&mut self) -> Option<i32> {
        self.get_ue().and_then(unsigned_to_signed)
    }

    pub fn position(&self) -> usize {
        self.pos
    }
}

/// `n <= 0 -> -2n`, `n > 0 -> 2n - 1`.
pub fn signed_to_unsigned(n: i32) -> u32 {
    if n <= 0 {
        (-(n as i64) * 2) as u32
    } else {
        (n as u32) * 2 - 1
    }
}

fn unsigned_to_signed(u: u32) -> Option<i32> {
    let v = if u % 2 == 1 { (i64::from(u) + 1) / 2 } else { -(i64::from(u) / 2) };
    i32::try_from(v).ok()
}

/// Codes one block of zigzag-ordered levels as (run, level) pairs plus the
/// end-of-block marker.
pub fn entropy_encode(levels: &[i32; 64]) -> Vec<u8> {
    let mut w = BitWriter::default();
    let mut run = 0u32;
    for &l in levels {
        if l == 0 {
            run += 1;
        } else {
            w.put_ue(run);
            w.put_se(l);
            run = 0;
        }
    }
    w.put_ue(EOB_RUN);
    w.put_se(0);
    w.into_bits()
}

/// Decodes one block; `None` when the bits are not a valid block.
pub fn entropy_decode(reader: &mut BitReader<'_>) -> Option<[i32; 64]> {
    let mut levels = [0i32; 64];
    let mut pos = 0usize;
    loop {
        let run = reader.get_ue()? as usize;
        let level = reader.get_se()?;
        if level == 0 {
            return (run == EOB_RUN as usize).then_some(levels);
        }
        pos += run;
        if pos >= 64 {
            return None;
        }
        levels[pos] = level;
        pos += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStream {
    pub width: u16,
    pub height: u16,
    pub quality: u8,
    /// Coded bits of each block, raster order.
    pub blocks: Vec<Vec<u8>>,
}

impl BlockStream {
    pub fn blocks_for(width: usize, height: usize) -> usize {
        width.div_ceil(8) * height.div_ceil(8)
    }

    pub fn byte_len(&self) -> usize {
        HEADER_BYTES + self.blocks.iter().map(|b| 2 + b.len().div_ceil(8)).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend(MAGIC);
        out.extend(self.width.to_le_bytes());
        out.extend(self.height.to_le_bytes());
        out.push(self.quality);
        out.extend((self.blocks.len() as u16).to_le_bytes());
        for b in &self.blocks {
            out.extend((b.len() as u16).to_le_bytes());
            out.extend(pack_padded(b));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Frame(format!("block stream: {m}"));
        if bytes.len() < HEADER_BYTES || &bytes[..4] != MAGIC {
            return Err(bad("bad magic or short header".into()));
        }
        let width = u16::from_le_bytes([bytes[4], bytes[5]]);
        let height = u16::from_le_bytes([bytes[6], bytes[7]]);
        let quality = bytes[8];
        let count = u16::from_le_bytes([bytes[9], bytes[10]]) as usize;
        if count != Self::blocks_for(width as usize, height as usize) {
            return Err(bad(format!("{count} blocks for a {width}x{height} image")));
        }
        let mut pos = HEADER_BYTES;
        let mut blocks = Vec::with_capacity(count);
        for i in 0..count {
            if bytes.len() < pos + 2 {
                return Err(bad(format!("truncated at block {i}")));
            }
            let nbits = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as usize;
            pos += 2;
            let nbytes = nbits.div_ceil(8);
            if bytes.len() < pos + nbytes {
                return Err(bad(format!("truncated payload in block {i}")));
            }
            blocks.push(unpack_prefix(&bytes[pos..pos + nbytes], nbits));
            pos += nbytes;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        Ok(BlockStream { width, height, quality, blocks })
    }
}

pub(crate) fn pack_padded(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b << (7 - i))))
        .collect()
}

pub(crate) fn unpack_prefix(bytes: &[u8], nbits: usize) -> Vec<u8> {
    (0..nbits).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect()
}

pub fn encode_image(image: &Image, quality: u8) -> Result<BlockStream> {
    let q = quant_matrix(quality)?;
    let (w, h) = (image.width(), image.height());
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::Dimension(format!("{w}x{h} image too large for the stream header")));
    }
    let mut blocks = Vec::with_capacity(BlockStream::blocks_for(w, h));
    for by in 0..h.div_ceil(8) {
        for bx in 0..w.div_ceil(8) {
            let mut block = [[0.0; 8]; 8];
            for (y, row) in block.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    // replicate the last row/column into partial blocks
                    let px = (bx * 8 + x).min(w - 1);
                    let py = (by * 8 + y).min(h - 1);
                    *v = (image.get(px, py) - 0.5) * 255.0;
                }
            }
            let coeffs = dct8x8(&block);
            let mut levels = [[0i32; 8]; 8];
            for v in 0..8 {
                for u in 0..8 {
                    levels[v][u] = round_half_away(coeffs[v][u] / f64::from(q[v][u])) as i32;
                }
            }
            blocks.push(entropy_encode(&zigzag(&levels)));
        }
    }
    Ok(BlockStream {
        width: w as u16,
        height: h as u16,
        quality,
        blocks,
    })
}

/// Decodes every block independently. Blocks that fail to parse within
/// their bit length come out mid-gray.
pub fn decode_image(stream: &BlockStream) -> Result<Image> {
    let q = quant_matrix(stream.quality)?;
    let (w, h) = (stream.width as usize, stream.height as usize);
    if stream.blocks.len() != BlockStream::blocks_for(w, h) {
        return Err(Error::Frame(format!("{} blocks for a {w}x{h} image", stream.blocks.len())));
    }
    let mut pixels = vec![0.5; w * h];
    let cols = w.div_ceil(8);
    for (i, bits) in stream.blocks.iter().enumerate() {
        let (bx, by) = (i % cols, i / cols);
        let Some(levels) = entropy_decode(&mut BitReader::new(bits)) else {
            continue;
        };
        let levels = unzigzag(&levels);
        let mut coeffs = [[0.0; 8]; 8];
        for v in 0..8 {
            for u in 0..8 {
                coeffs[v][u] = f64::from(levels[v][u]) * f64::from(q[v][u]);
            }
        }
        let block = idct8x8(&coeffs);
        for (y, row) in block.iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                let (px, py) = (bx * 8 + x, by * 8 + y);
                if px < w && py < h {
                    pixels[py * w + px] = (v / 255.0 + 0.5).clamp(0.0, 1.0);
                }
            }
        }
    }
    Image::new(w, h, pixels)
}

/// `10 log10(1 / MSE)`; identical images give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Dimension(format!(
            "psnr of {}x{} and {}x{} images",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.pixels().len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// Source bits per pixel of a coded stream.
pub fn bits_per_pixel(stream: &BlockStream) -> f64 {
    (stream.byte_len() * 8) as f64 / (stream.width as f64 * stream.height as f64)
}
