//! Split CNN classifier: convolutional extractor (transmitter side) and a
//! fully-connected semantic decoder (receiver side), with hand-written
//! forward and backward passes.

mod checkpoint;
mod model;
mod tensor;
mod train;

pub use checkpoint::{checkpoint_bytes, fingerprint, load_checkpoint, model_from_bytes, save_checkpoint};
pub use model::{predict, softmax, ConvSpec, Model, ModelSpec};
pub use tensor::Tensor;
pub use train::{accuracy, train, ChannelMode, EpochMetrics, PruneAware, TrainConfig, TrainOutcome};
