//! Experiment orchestration: configuration, model preparation, sweeps,
//! metrics and plots.

mod config;
mod metrics;
mod plot;
mod sweep;

pub use config::{ExperimentConfig, Scheme, SemanticTraining};
pub use metrics::{compute_bpp, delay_model, Bpp, Delay};
pub use plot::{accuracy_vs_bpp, accuracy_vs_snr, delay_bars, emit_plots, BarChart, LineChart, Series, StackedBar};
pub use sweep::{
    evaluate_point, measure_process_ms, row_seed, run_sweep, Evaluator, Point, PointResult, Report, ReportRow,
    CSV_HEADER,
};

use crate::dataset::{build_dataset, load_pgm_dir, DatasetSplit, CLASS_NAMES};
use crate::kb::{build_kb, load_kb, KnowledgeBase};
use crate::nn::{checkpoint_bytes, load_checkpoint, model_from_bytes, train, EpochMetrics, Model, ModelSpec};
use crate::{Error, Result};

/// The dataset the config points at: a PGM tree when `dataset.dir` is set,
/// otherwise the synthetic generator.
pub fn load_split(config: &ExperimentConfig) -> Result<DatasetSplit> {
    match &config.data_dir {
        Some(dir) => {
            let names: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
            load_pgm_dir(dir, &names, config.dataset.test_fraction, config.dataset.seed)
        }
        None => build_dataset(&config.dataset),
    }
}

/// The three artifacts a sweep needs.
#[derive(Debug, Clone)]
pub struct Models {
    /// Noise- and prune-trained split model shared by both link ends.
    pub semantic: Model,
    /// Clean-trained classifier behind the baseline codec.
    pub baseline: Model,
    pub kb: KnowledgeBase,
}

impl Models {
    /// Loads checkpoints and KB named in `config`. The second value holds
    /// non-fatal warnings (a KB built from another checkpoint).
    pub fn load(config: &ExperimentConfig) -> Result<(Self, Vec<String>)> {
        let hint = "run `scait train` and `scait build-kb` first";
        let semantic = load_checkpoint(&config.checkpoint).map_err(|e| with_hint(e, hint))?;
        let baseline = load_checkpoint(&config.baseline_checkpoint).map_err(|e| with_hint(e, hint))?;
        let kb = load_kb(&config.kb).map_err(|e| with_hint(e, hint))?;
        let warnings = kb.fingerprint_warning(&semantic).into_iter().collect();
        Ok((Models { semantic, baseline, kb }, warnings))
    }
}

fn with_hint(e: Error, hint: &str) -> Error {
    match e {
        Error::Setup(m) => Error::Setup(format!("{m} ({hint})")),
        other => other,
    }
}

pub struct Trained {
    pub models: Models,
    pub clean_metrics: Vec<EpochMetrics>,
    pub semantic_metrics: Vec<EpochMetrics>,
}

/// The model as a checkpoint stores it (parameters rounded to f32).
fn stored(model: Model) -> Result<Model> {
    model_from_bytes(&checkpoint_bytes(&model))
}

/// Clean training, semantic fine-tuning from the clean weights (keeping
/// maps in the clean model's KB order), then the KB of the fine-tuned model.
/// Both models are returned at stored precision, so saving and reloading
/// them reproduces the same KB and predictions.
pub fn train_models(config: &ExperimentConfig, split: &DatasetSplit) -> Result<Trained> {
    let (w, h) = split
        .image_size()
        .ok_or_else(|| Error::Setup("dataset is empty".into()))?;
    if w != h {
        return Err(Error::Dimension(format!("images must be square, got {w}x{h}")));
    }
    let spec = ModelSpec::for_input(w, split.num_classes());
    let init = Model::new(spec.clone(), config.train.seed)?;
    let clean = train(init, split, &config.train)?;
    let baseline = stored(clean.model)?;
    let k = spec.cut_maps();
    let order = build_kb(&baseline, split)?.ranking();
    let tune_cfg = config.semantic.train_config(&config.train, k, Some(order.order()));
    let tuned = train(baseline.clone(), split, &tune_cfg)?;
    let semantic = stored(tuned.model)?;
    let kb = build_kb(&semantic, split)?;
    Ok(Trained {
        models: Models { semantic, baseline, kb },
        clean_metrics: clean.metrics,
        semantic_metrics: tuned.metrics,
    })
}
