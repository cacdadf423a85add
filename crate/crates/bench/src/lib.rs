//! Inputs shared by the benchmarks.

use scait_core::dataset::{generate_texture, Image, NUM_CLASSES};
use scait_core::harness::Models;
use scait_core::kb::KnowledgeBase;
use scait_core::nn::{fingerprint, Model, ModelSpec};

/// One texture per class at the default 32x32 size.
pub fn sample_images() -> Vec<Image> {
    (0..NUM_CLASSES)
        .map(|c| generate_texture(c, 32, 32, 7 + c as u64).expect("valid class"))
        .collect()
}

/// An untrained default model with a flat KB; timing does not depend on
/// the weights.
pub fn untrained_models() -> Models {
    let model = Model::new(ModelSpec::default(), 1).expect("default spec");
    let k = model.spec().cut_maps();
    let scores = (0..k * NUM_CLASSES).map(|i| 1.0 / (1 + i) as f64).collect();
    let kb = KnowledgeBase::from_weights(k, NUM_CLASSES, scores, fingerprint(&model)).expect("shape matches");
    Models {
        semantic: model.clone(),
        baseline: model,
        kb,
    }
}
