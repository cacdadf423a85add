//! The technical level: bits, Hamming(7,4), BPSK over AWGN.

use rand_distr::{Distribution, StandardNormal};

use crate::rng::rng_from;
use crate::{Error, Result};

/// One bit per element (`0` or `1`), MSB-first within each source byte.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bitstream {
    pub bits: Vec<u8>,
    pub origin_len_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fec {
    None,
    Hamming74,
}

impl Fec {
    /// Coded bits per source bit.
    pub fn expansion(self) -> f64 {
        match self {
            Fec::None => 1.0,
            Fec::Hamming74 => 7.0 / 4.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Fec::None => "none",
            Fec::Hamming74 => "hamming74",
        }
    }
}

impl std::str::FromStr for Fec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Fec::None),
            "hamming74" => Ok(Fec::Hamming74),
            _ => Err(Error::InvalidArgument(format!("unknown FEC {s:?} (none | hamming74)"))),
        }
    }
}

/// SNR is Es/N0 per unit-energy BPSK symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub fec: Fec,
    pub seed: u64,
}

pub fn pack_bits(bytes: &[u8]) -> Bitstream {
    let bits = bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1))
        .collect();
    Bitstream {
        bits,
        origin_len_bytes: bytes.len(),
    }
}

pub fn unpack_bits(stream: &Bitstream) -> Result<Vec<u8>> {
    if !stream.bits.len().is_multiple_of(8) {
        return Err(Error::Framing(format!("{} bits is not a whole number of bytes", stream.bits.len())));
    }
    Ok(stream
        .bits
        .chunks_exact(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)))
        .collect())
}

/// Codeword layout `[p1 p2 d1 p3 d2 d3 d4]`. Input is zero-padded to a
/// multiple of four bits.
pub fn hamming74_encode(bits: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bits.len().div_ceil(4) * 7);
    for chunk in bits.chunks(4) {
        let mut d = [0u8; 4];
        d[..chunk.len()].copy_from_slice(chunk);
        let [d1, d2, d3, d4] = d;
        let p1 = d1 ^ d2 ^ d4;
        let p2 = d1 ^ d3 ^ d4;
        let p3 = d2 ^ d3 ^ d4;
        out.extend([p1, p2, d1, p3, d2, d3, d4]);
    }
    out
}

/// Syndrome decoding; corrects any single flipped bit per codeword.
pub fn hamming74_decode(bits: &[u8]) -> Result<Vec<u8>> {
    if !bits.len().is_multiple_of(7) {
        return Err(Error::Framing(format!("{} coded bits is not a multiple of 7", bits.len())));
    }
    let mut out = Vec::with_capacity(bits.len() / 7 * 4);
    for cw in bits.chunks_exact(7) {
        let mut c = [0u8; 7];
        c.copy_from_slice(cw);
        let s1 = c[0] ^ c[2] ^ c[4] ^ c[6];
        let s2 = c[1] ^ c[2] ^ c[5] ^ c[6];
        let s3 = c[3] ^ c[4] ^ c[5] ^ c[6];
        let pos = (s3 << 2 | s2 << 1 | s1) as usize;
        if pos != 0 {
            c[pos - 1] ^= 1;
        }
        out.extend([c[2], c[4], c[5], c[6]]);
    }
    Ok(out)
}

/// 0 -> +1, 1 -> -1.
pub fn bpsk_modulate(bits: &[u8]) -> Vec<f64> {
    bits.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect()
}

/// Hard decision by sign; exactly zero decides 0.
pub fn bpsk_demodulate(symbols: &[f64]) -> Vec<u8> {
    symbols.iter().map(|&s| u8::from(s < 0.0)).collect()
}

/// Adds i.i.d. Gaussian noise of variance `N0/2 = 1 / (2 * 10^(snr/10))`
/// per real symbol, with `snr` read as Es/N0 for unit-energy symbols.
pub fn awgn(symbols: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    let sigma = (0.5 * 10f64.powf(-snr_db / 10.0)).sqrt();
    let mut rng = rng_from(seed);
    symbols
        .iter()
        .map(|&s| {
            let n: f64 = StandardNormal.sample(&mut rng);
            s + sigma * n
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub bytes: Vec<u8>,
    /// Raw channel bit error rate, before FEC decoding.
    pub ber: f64,
    /// Bits actually put on the air.
    pub air_bits: usize,
}

/// pack -> FEC -> BPSK -> AWGN -> demod -> FEC decode -> unpack.
pub fn transmit(bytes: &[u8], config: &ChannelConfig) -> Transmission {
    let stream = pack_bits(bytes);
    let coded = match config.fec {
        Fec::None => stream.bits.clone(),
        Fec::Hamming74 => hamming74_encode(&stream.bits),
    };
    let received = bpsk_demodulate(&awgn(&bpsk_modulate(&coded), config.snr_db, config.seed));
    let errors = coded.iter().zip(&received).filter(|(a, b)| a != b).count();
    let mut data = match config.fec {
        Fec::None => received,
        Fec::Hamming74 => hamming74_decode(&received).expect("coded length is a multiple of 7"),
    };
    data.truncate(stream.bits.len());
    let out = unpack_bits(&Bitstream {
        bits: data,
        origin_len_bytes: bytes.len(),
    })
    .expect("truncated to whole bytes");
    Transmission {
        bytes: out,
        ber: if coded.is_empty() { 0.0 } else { errors as f64 / coded.len() as f64 },
        air_bits: coded.len(),
    }
}
