//! The semantic level: which feature maps to send, how they are quantized,
//! and the byte layout of a semantic frame.
//!
//! Frame layout (little-endian):
//!
//! ```text
//! K u16 | n_keep u16 | map_h u8 | map_w u8 | pad u16 = 0 |
//!   { index u16 | vmin f32 | vmax f32 | map_h*map_w code bytes } * n_keep
//! ```

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::kb::MapRanking;
use crate::nn::Tensor;
use crate::rng::{rng_from, round_half_away};
use crate::{Error, Result};

pub const FRAME_HEADER_BYTES: usize = 8;
/// Per-map side information: index + vmin + vmax.
pub const MAP_HEADER_BYTES: usize = 10;

/// Fraction of feature maps discarded before transmission.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct CompressionRatio(f64);

impl CompressionRatio {
    pub fn new(cr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&cr) {
            return Err(Error::InvalidArgument(format!(
                "compression ratio must lie in [0, 1), got {cr}"
            )));
        }
        Ok(CompressionRatio(cr))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `max(1, round((1 - cr) * k))`, never more than `k`.
    pub fn n_keep(self, k: usize) -> usize {
        (round_half_away((1.0 - self.0) * k as f64) as usize).clamp(1, k.max(1))
    }

    /// The smallest ratio that keeps exactly `n` of `k` maps.
    pub fn keeping(n: usize, k: usize) -> Result<Self> {
        if n == 0 || n > k {
            return Err(Error::InvalidArgument(format!("cannot keep {n} of {k} maps")));
        }
        CompressionRatio::new(1.0 - n as f64 / k as f64)
    }
}

/// Top `n_keep` maps of the ranking, returned in ascending index order.
pub fn select_maps(ranking: &MapRanking, cr: CompressionRatio, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = ranking.order().iter().copied().take(cr.n_keep(k)).collect();
    idx.sort_unstable();
    idx
}

/// Task-agnostic baseline: `n_keep` maps drawn uniformly without replacement.
pub fn random_select(k: usize, cr: CompressionRatio, seed: u64) -> Vec<usize> {
    let n = cr.n_keep(k);
    let mut idx = index::sample(&mut rng_from(seed), k, n).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMap {
    pub map_index: u16,
    pub vmin: f32,
    pub vmax: f32,
    pub codes: Vec<u8>,
}

/// Largest f32 not above `x`.
fn f32_floor(x: f64) -> f32 {
    let f = x as f32;
    if f64::from(f) > x {
        f.next_down()
    } else {
        f
    }
}

/// Smallest f32 not below `x`.
fn f32_ceil(x: f64) -> f32 {
    let f = x as f32;
    if f64::from(f) < x {
        f.next_up()
    } else {
        f
    }
}

/// Affine 8-bit quantization over the map's own range. The range is stored
/// as f32, widened outward so it still contains every value.
pub fn quantize_map(values: &[f64], map_index: u16) -> Result<QuantizedMap> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature map"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || lo == hi {
        let v = if values.is_empty() { 0.0 } else { lo as f32 };
        return Ok(QuantizedMap {
            map_index,
            vmin: v,
            vmax: v,
            codes: vec![0; values.len()],
        });
    }
    let (vmin, vmax) = (f32_floor(lo), f32_ceil(hi));
    let (base, range) = (f64::from(vmin), f64::from(vmax) - f64::from(vmin));
    let codes = values
        .iter()
        .map(|v| round_half_away(255.0 * (v - base) / range).clamp(0.0, 255.0) as u8)
        .collect();
    Ok(QuantizedMap {
        map_index,
        vmin,
        vmax,
        codes,
    })
}

pub fn dequantize_map(map: &QuantizedMap) -> Vec<f64> {
    let (base, range) = (f64::from(map.vmin), f64::from(map.vmax) - f64::from(map.vmin));
    if range == 0.0 {
        return vec![base; map.codes.len()];
    }
    let step = range / 255.0;
    map.codes.iter().map(|&c| base + f64::from(c) * step).collect()
}

/// The semantic-level payload: selected, quantized feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFrame {
    pub k: u16,
    pub map_h: u8,
    pub map_w: u8,
    /// Sorted by `map_index`, strictly increasing.
    pub maps: Vec<QuantizedMap>,
}

impl SemanticFrame {
    pub fn n_keep(&self) -> usize {
        self.maps.len()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.maps.iter().map(|m| m.map_index as usize).collect()
    }

    /// Serialized size for `n_keep` maps of `h*w` values.
    pub fn byte_len_for(n_keep: usize, h: usize, w: usize) -> usize {
        FRAME_HEADER_BYTES + n_keep * (MAP_HEADER_BYTES + h * w)
    }

    pub fn byte_len(&self) -> usize {
        Self::byte_len_for(self.maps.len(), self.map_h as usize, self.map_w as usize)
    }

    fn validate(&self) -> Result<()> {
        if self.maps.is_empty() {
            return Err(Error::Frame("frame carries no maps".into()));
        }
        let plane = self.map_h as usize * self.map_w as usize;
        let mut prev: Option<u16> = None;
        for m in &self.maps {
            if m.map_index >= self.k {
                return Err(Error::Frame(format!("map index {} out of range (K = {})", m.map_index, self.k)));
            }
            if prev.is_some_and(|p| m.map_index <= p) {
                return Err(Error::Frame(format!("map index {} duplicated or out of order", m.map_index)));
            }
            if m.codes.len() != plane {
                return Err(Error::Frame(format!("map {} has {} codes, expected {plane}", m.map_index, m.codes.len())));
            }
            prev = Some(m.map_index);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend(self.k.to_le_bytes());
        out.extend((self.maps.len() as u16).to_le_bytes());
        out.push(self.map_h);
        out.push(self.map_w);
        out.extend(0u16.to_le_bytes());
        for m in &self.maps {
            out.extend(m.map_index.to_le_bytes());
            out.extend(m.vmin.to_le_bytes());
            out.extend(m.vmax.to_le_bytes());
            out.extend(&m.codes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FRAME_HEADER_BYTES {
            return Err(Error::Frame(format!("{} bytes is shorter than the frame header", bytes.len())));
        }
        let k = u16::from_le_bytes([bytes[0], bytes[1]]);
        let n_keep = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
        let (map_h, map_w) = (bytes[4], bytes[5]);
        let plane = map_h as usize * map_w as usize;
        let expected = Self::byte_len_for(n_keep, map_h as usize, map_w as usize);
        if bytes.len() != expected {
            return Err(Error::Frame(format!("frame is {} bytes, header implies {expected}", bytes.len())));
        }
        let maps = bytes[FRAME_HEADER_BYTES..]
            .chunks_exact(MAP_HEADER_BYTES + plane)
            .map(|c| QuantizedMap {
                map_index: u16::from_le_bytes([c[0], c[1]]),
                vmin: f32::from_le_bytes(c[2..6].try_into().unwrap()),
                vmax: f32::from_le_bytes(c[6..10].try_into().unwrap()),
                codes: c[10..].to_vec(),
            })
            .collect();
        let frame = SemanticFrame { k, map_h, map_w, maps };
        frame.validate()?;
        Ok(frame)
    }
}

/// Quantizes the maps at `indices` (ascending, unique) of a `[K, h, w]`
/// feature tensor into a frame.
pub fn encode_frame(features: &Tensor, indices: &[usize]) -> Result<SemanticFrame> {
    let [k, h, w] = match features.shape() {
        &[k, h, w] => [k, h, w],
        s => return Err(Error::Dimension(format!("feature maps must be [K, h, w], got {s:?}"))),
    };
    if k > u16::MAX as usize || h > u8::MAX as usize || w > u8::MAX as usize {
        return Err(Error::Frame(format!("feature shape {k}x{h}x{w} does not fit the frame header")));
    }
    if indices.is_empty() {
        return Err(Error::Frame("no maps selected".into()));
    }
    let mut maps = Vec::with_capacity(indices.len());
    let mut prev: Option<usize> = None;
    for &i in indices {
        if i >= k {
            return Err(Error::Frame(format!("map index {i} out of range (K = {k})")));
        }
        if prev.is_some_and(|p| i <= p) {
            return Err(Error::Frame(format!("map index {i} duplicated or out of order")));
        }
        prev = Some(i);
        maps.push(quantize_map(features.outer(i), i as u16)?);
    }
    Ok(SemanticFrame {
        k: k as u16,
        map_h: h as u8,
        map_w: w as u8,
        maps,
    })
}

/// Rebuilds a `[K, h, w]` tensor: dequantized values at transmitted
/// indices, exact zeros everywhere else.
pub fn decode_frame(frame: &SemanticFrame, k: usize) -> Result<Tensor> {
    if frame.k as usize != k {
        return Err(Error::Frame(format!("frame declares K = {}, decoder expects {k}", frame.k)));
    }
    frame.validate()?;
    let (h, w) = (frame.map_h as usize, frame.map_w as usize);
    let mut out = Tensor::zeros(vec![k, h, w]);
    for m in &frame.maps {
        out.outer_mut(m.map_index as usize).copy_from_slice(&dequantize_map(m));
    }
    Ok(out)
}

/// In-place analog channel: i.i.d. Gaussian noise of variance
/// `P / 10^(snr/10)`, `P` being the mean square of the input.
pub fn analog_perturb_slice(values: &mut [f64], snr_db: f64, seed: u64) {
    if values.is_empty() {
        return;
    }
    let power = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
    if power == 0.0 {
        return;
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = rng_from(seed);
    for v in values.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * n;
    }
}

pub fn analog_perturb(features: &Tensor, snr_db: f64, seed: u64) -> Tensor {
    let mut out = features.clone();
    analog_perturb_slice(out.data_mut(), snr_db, seed);
    out
}
