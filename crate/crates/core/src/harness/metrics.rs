//! Bits-per-pixel accounting and the delay model.

use crate::channel::Fec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bpp {
    /// Serialized payload bits (link framing excluded) per source pixel.
    pub source: f64,
    /// `source` times the FEC expansion.
    pub air: f64,
}

pub fn compute_bpp(payload_bytes: usize, width: usize, height: usize, fec: Fec) -> Bpp {
    let source = (payload_bytes * 8) as f64 / (width * height) as f64;
    Bpp {
        source,
        air: source * fec.expansion(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delay {
    pub process_ms: f64,
    pub transmission_ms: f64,
    pub total_ms: f64,
}

/// Measured processing time plus modeled airtime of `payload_bits`.
pub fn delay_model(process_ms: f64, payload_bits: f64, link_rate_bps: f64) -> Delay {
    let transmission_ms = payload_bits / link_rate_bps * 1e3;
    Delay {
        process_ms,
        transmission_ms,
        total_ms: process_ms + transmission_ms,
    }
}
