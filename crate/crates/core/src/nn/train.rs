use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::model::{predict, Model};
use crate::dataset::{DatasetSplit, LabeledExample};
use crate::rng::{derive, rng_from};
use crate::semantic::{analog_perturb_slice, CompressionRatio};
use crate::{Error, Result};

/// What the decoder sees at the cut point during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelMode {
    Clean,
    /// Additive Gaussian noise at an SNR drawn uniformly per batch.
    AnalogAwgn { snr_lo_db: f64, snr_hi_db: f64 },
}

/// Map dropping during training. The keep-fraction is drawn per batch,
/// log-uniformly in `[lo, hi]`; dropped maps are zeroed.
#[derive(Debug, Clone, PartialEq)]
pub enum PruneAware {
    Off,
    /// Each example keeps a random subset.
    RandomKeep { lo: f64, hi: f64 },
    /// Each example keeps the leading maps of `order`.
    RankedKeep { lo: f64, hi: f64, order: Vec<usize> },
}

impl PruneAware {
    fn range(&self) -> Option<(f64, f64)> {
        match *self {
            PruneAware::Off => None,
            PruneAware::RandomKeep { lo, hi } | PruneAware::RankedKeep { lo, hi, .. } => Some((lo, hi)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub channel_mode: ChannelMode,
    pub prune_aware: PruneAware,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 7,
            channel_mode: ChannelMode::Clean,
            prune_aware: PruneAware::Off,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if let ChannelMode::AnalogAwgn { snr_lo_db, snr_hi_db } = self.channel_mode {
            if !(snr_lo_db.is_finite() && snr_hi_db.is_finite() && snr_lo_db <= snr_hi_db) {
                return bad(format!("invalid training SNR range [{snr_lo_db}, {snr_hi_db}]"));
            }
        }
        if let Some((lo, hi)) = self.prune_aware.range() {
            if !(0.0 < lo && lo <= hi && hi <= 1.0) {
                return bad(format!("invalid keep-fraction range [{lo}, {hi}]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
}

/// Fraction of examples whose argmax matches the label.
pub fn accuracy(model: &Model, examples: &[LabeledExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for ex in examples {
        let (_, logits) = model.forward(&ex.image)?;
        if predict(logits.data())? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Mini-batch SGD with momentum on softmax cross-entropy.
///
/// Deterministic in `(model, split, config)`: shuffling, noise and map
/// dropping all draw from streams derived from `config.seed`.
pub fn train(mut model: Model, split: &DatasetSplit, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    for ex in &split.train {
        if ex.label >= model.spec().classes {
            return Err(Error::InvalidClass {
                class_id: ex.label,
                classes: model.spec().classes,
            });
        }
        if ex.image.width() != model.spec().input_w || ex.image.height() != model.spec().input_h {
            return Err(Error::Dimension("training image size does not match the model".into()));
        }
    }
    let k = model.spec().cut_maps();
    let mut velocity = model.zero_grads();
    let mut metrics = Vec::with_capacity(config.epochs);
    if let PruneAware::RankedKeep { order, .. } = &config.prune_aware {
        let mut seen = vec![false; k];
        if order.len() != k || !order.iter().all(|&j| j < k && !std::mem::replace(&mut seen[j], true)) {
            return Err(Error::InvalidArgument(format!("keep order must be a permutation of 0..{k}")));
        }
    }
    let mut perm: Vec<usize> = (0..split.train.len()).collect();

    for epoch in 0..config.epochs {
        perm.shuffle(&mut rng_from(derive(&[config.seed, epoch as u64, 0xE90C])));
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in perm.chunks(config.batch_size).enumerate() {
            let mut brng = rng_from(derive(&[config.seed, epoch as u64, b as u64]));
            let snr_db = match config.channel_mode {
                ChannelMode::Clean => None,
                ChannelMode::AnalogAwgn { snr_lo_db, snr_hi_db } => Some(if snr_lo_db < snr_hi_db {
                    brng.random_range(snr_lo_db..=snr_hi_db)
                } else {
                    snr_lo_db
                }),
            };
            let n_keep = config.prune_aware.range().map(|(lo, hi)| {
                let frac = if lo < hi {
                    brng.random_range(lo.ln()..=hi.ln()).exp().min(1.0)
                } else {
                    lo
                };
                CompressionRatio::new(1.0 - frac).unwrap_or_default().n_keep(k)
            });

            let mut grads = model.zero_grads();
            let mut batch_loss = 0.0;
            for (i, &idx) in chunk.iter().enumerate() {
                let ex = &split.train[idx];
                let ex_seed = derive(&[config.seed, epoch as u64, b as u64, i as u64]);
                let perturb = |features: &mut [f64]| {
                    if let Some(snr) = snr_db {
                        analog_perturb_slice(features, snr, ex_seed);
                    }
                    n_keep.filter(|&n| n < k).map(|n| {
                        let mut keep = vec![false; k];
                        match &config.prune_aware {
                            PruneAware::RankedKeep { order, .. } => order.iter().take(n).for_each(|&j| keep[j] = true),
                            _ => index::sample(&mut rng_from(derive(&[ex_seed, 0xD809])), k, n)
                                .into_iter()
                                .for_each(|j| keep[j] = true),
                        }
                        let plane = features.len() / k;
                        for (j, kept) in keep.iter().enumerate() {
                            if !kept {
                                features[j * plane..(j + 1) * plane].fill(0.0);
                            }
                        }
                        keep
                    })
                };
                let (loss, pred) = model.accumulate_example(ex.image.pixels(), ex.label, perturb, &mut grads);
                batch_loss += loss;
                if pred == ex.label {
                    correct += 1;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("non-finite loss in batch {b}"),
                });
            }
            epoch_loss += batch_loss;

            let scale = 1.0 / chunk.len() as f64;
            for ((p, v), g) in model.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grads) {
                for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = config.momentum * *vv + gv * scale;
                    *pv -= config.learning_rate * *vv;
                }
            }
        }
        let n = split.train.len() as f64;
        let m = EpochMetrics {
            epoch,
            loss: epoch_loss / n,
            train_accuracy: correct as f64 / n,
            test_accuracy: accuracy(&model, &split.test)?,
        };
        if !m.loss.is_finite() || !model.params().iter().all(|p| p.all_finite()) {
            return Err(Error::Training {
                epoch,
                msg: "non-finite parameters".into(),
            });
        }
        metrics.push(m);
    }
    Ok(TrainOutcome { model, metrics })
}
