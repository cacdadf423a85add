//! Independent oracles shared by the integration targets.
#![allow(dead_code)]

use scait_core::dataset::{Image, LabeledExample};
use scait_core::nn::{ConvSpec, Model, ModelSpec, Tensor};
use scait_core::rng::rng_from;

use rand::Rng;

/// Below this magnitude a central difference at eps=1e-5 is dominated by
/// rounding, so relative errors are taken against this floor instead.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Same three-conv layout as the default model, shrunk to 8x8 inputs.
pub fn toy_spec() -> ModelSpec {
    ModelSpec {
        input_h: 8,
        input_w: 8,
        convs: vec![
            ConvSpec { out_channels: 2, pool: true },
            ConvSpec { out_channels: 3, pool: true },
            ConvSpec { out_channels: 4, pool: false },
        ],
        hidden: 6,
        classes: 3,
    }
}

/// A toy model with every parameter, biases included, drawn uniformly from
/// [-0.5, 0.5]. Zero biases put dead units exactly on a ReLU kink, where a
/// central difference and the subgradient disagree by construction.
pub fn random_toy_model(seed: u64) -> Model {
    let mut model = Model::new(toy_spec(), seed).unwrap();
    let mut rng = rng_from(seed ^ 0x7A11);
    for t in model.params_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    model
}

pub fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = rng_from(seed);
    Image::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn random_batch(spec: &ModelSpec, n: usize, seed: u64) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| LabeledExample {
            image: random_image(spec.input_w, spec.input_h, seed.wrapping_add(i as u64)),
            label: i % spec.classes,
        })
        .collect()
}

/// Largest relative error between backprop and central differences of the
/// mean loss, over every parameter.
pub fn param_grad_error(model: &Model, batch: &[LabeledExample], eps: f64) -> f64 {
    let (_, grads) = model.loss_and_grads(batch).unwrap();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (t, grad) in grads.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = probe.params()[t].data()[j];
            probe.params_mut()[t].data_mut()[j] = orig + eps;
            let up = probe.loss(batch).unwrap();
            probe.params_mut()[t].data_mut()[j] = orig - eps;
            let down = probe.loss(batch).unwrap();
            probe.params_mut()[t].data_mut()[j] = orig;
            worst = worst.max(rel_err(grad.data()[j], (up - down) / (2.0 * eps)));
        }
    }
    worst
}

/// Largest relative error of d(logit class)/d(cut activation) against
/// central differences through the decoder.
pub fn feature_grad_error(model: &Model, image: &Image, class: usize, eps: f64) -> f64 {
    let analytic = model.grad_wrt_feature_maps(image, class).unwrap();
    let features = model.extract(image).unwrap();
    let mut worst = 0.0f64;
    for j in 0..features.len() {
        let at = |delta: f64| {
            let mut f: Tensor = features.clone();
            f.data_mut()[j] += delta;
            model.decode(&f).unwrap().data()[class]
        };
        let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data()[j], numeric));
    }
    worst
}

/// Gaussian tail probability by composite Simpson integration of the
/// standard normal density over [x, x + 12].
pub fn q_function(x: f64) -> f64 {
    let n = 20_000;
    let h = 12.0 / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(x) + pdf(x + 12.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(x + i as f64 * h);
    }
    s * h / 3.0
}

/// Uncoded BPSK bit error rate at `snr_db` (Es/N0 per bit).
pub fn bpsk_ber(snr_db: f64) -> f64 {
    q_function((2.0 * 10f64.powf(snr_db / 10.0)).sqrt())
}
