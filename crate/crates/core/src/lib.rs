//! Task-oriented semantic communication over a simulated digital channel.
//!
//! A small CNN is split at a feature-map layer. The transmitter runs the
//! convolutional extractor, ranks the resulting maps with a gradient-derived
//! knowledge base, and sends only the top-ranked maps (8-bit quantized) over
//! a BPSK/AWGN channel with optional Hamming(7,4) protection. The receiver
//! zero-fills the missing maps and classifies with the fully-connected
//! decoder. A block-DCT image codec and a random map selector serve as the
//! two baselines.
//!
//! Module map:
//! - [`dataset`]: synthetic surface-defect textures and PGM ingestion
//! - [`nn`]: tensors, the split classifier, training, checkpoints
//! - [`kb`]: knowledge base construction, ranking, persistence and sync
//! - [`semantic`]: map selection, quantization, semantic frames
//! - [`channel`]: bit packing, Hamming(7,4), BPSK, AWGN, BER
//! - [`codec`]: the block-DCT baseline image codec
//! - [`link`]: datagram framing and the UDP transmitter/receiver pair
//! - [`harness`]: configuration, sweeps, metrics, plots

pub mod channel;
pub mod codec;
pub mod dataset;
mod error;
pub mod harness;
pub mod kb;
pub mod link;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod semantic;

pub use channel::{ChannelConfig, Fec};
pub use dataset::{DatasetConfig, DatasetSplit, Image, LabeledExample};
pub use error::{Error, Result};
pub use kb::{KnowledgeBase, MapRanking};
pub use nn::{Model, ModelSpec, Tensor, TrainConfig};
pub use semantic::{CompressionRatio, QuantizedMap, SemanticFrame};
