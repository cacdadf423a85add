//! Per-image transmitter and receiver steps shared by the offline harness
//! and the live link, so both paths produce identical results.
//!
//! In simulation only the value-carrying bytes cross the noisy channel: the
//! quantization codes of a semantic frame and the per-block payload of a
//! block stream. Headers, map indices, quantization ranges and block bit
//! lengths travel uncorrupted, the way the link layer's CRC-and-retransmit
//! would deliver them.

use crate::channel::{transmit, ChannelConfig};
use crate::codec::{decode_image, encode_image, pack_padded, unpack_prefix, BlockStream};
use crate::dataset::Image;
use crate::nn::{predict, Model};
use crate::rng::derive;
use crate::semantic::{decode_frame, encode_frame, SemanticFrame};
use crate::Result;

/// Channel seed for the `index`-th image of a run seeded with `run_seed`.
pub fn image_seed(run_seed: u64, index: usize) -> u64 {
    derive(&[run_seed, index as u64, 0x1A6E])
}

pub fn channel_for_image(channel: &ChannelConfig, index: usize) -> ChannelConfig {
    ChannelConfig {
        seed: image_seed(channel.seed, index),
        ..*channel
    }
}

/// Cut-point features of `image`, quantized at `indices`.
pub fn semantic_encode(model: &Model, image: &Image, indices: &[usize]) -> Result<SemanticFrame> {
    let features = model.extract(image)?;
    encode_frame(&features, indices)
}

/// Sends the frame's code bytes through the channel. Returns the received
/// frame and the raw bit error rate.
pub fn impair_frame(frame: &SemanticFrame, channel: &ChannelConfig) -> (SemanticFrame, f64) {
    let payload: Vec<u8> = frame.maps.iter().flat_map(|m| m.codes.iter().copied()).collect();
    let rx = transmit(&payload, channel);
    let mut out = frame.clone();
    let plane = frame.map_h as usize * frame.map_w as usize;
    for (m, chunk) in out.maps.iter_mut().zip(rx.bytes.chunks_exact(plane.max(1))) {
        m.codes.copy_from_slice(chunk);
    }
    (out, rx.ber)
}

/// Zero-fills missing maps and runs the fully-connected decoder.
pub fn semantic_classify(model: &Model, frame: &SemanticFrame) -> Result<usize> {
    let features = decode_frame(frame, model.spec().cut_maps())?;
    predict(model.decode(&features)?.data())
}

pub fn baseline_encode(image: &Image, quality: u8) -> Result<BlockStream> {
    encode_image(image, quality)
}

/// Sends every block's payload bytes (zero-padded per block) through the
/// channel; bit lengths are preserved.
pub fn impair_blockstream(stream: &BlockStream, channel: &ChannelConfig) -> (BlockStream, f64) {
    let packed: Vec<Vec<u8>> = stream.blocks.iter().map(|b| pack_padded(b)).collect();
    let payload: Vec<u8> = packed.iter().flatten().copied().collect();
    let rx = transmit(&payload, channel);
    let mut out = stream.clone();
    let mut pos = 0;
    for (block, bytes) in out.blocks.iter_mut().zip(&packed) {
        let n = block.len();
        *block = unpack_prefix(&rx.bytes[pos..pos + bytes.len()], n);
        pos += bytes.len();
    }
    (out, rx.ber)
}

pub fn baseline_classify(model: &Model, stream: &BlockStream) -> Result<usize> {
    let image = decode_image(stream)?;
    let (_, logits) = model.forward(&image)?;
    predict(logits.data())
}
