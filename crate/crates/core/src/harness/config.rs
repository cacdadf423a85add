//! Line-oriented `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::channel::Fec;
use crate::dataset::DatasetConfig;
use crate::nn::{ChannelMode, PruneAware, TrainConfig};
use crate::semantic::CompressionRatio;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    ScAit,
    ScRandom,
    BaselineCodec,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ScAit, Scheme::ScRandom, Scheme::BaselineCodec];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::ScAit => "sc_ait",
            Scheme::ScRandom => "sc_random",
            Scheme::BaselineCodec => "baseline_codec",
        }
    }

    pub fn is_semantic(self) -> bool {
        self != Scheme::BaselineCodec
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme {s:?} (sc_ait | sc_random | baseline_codec)")))
    }
}

/// Fine-tuning of the clean model into the semantic (transmitter/receiver)
/// model: analog feature noise plus random map dropping.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    pub snr_lo_db: f64,
    pub snr_hi_db: f64,
    pub keep_lo: f64,
    pub keep_hi: f64,
    /// Keep the clean model's KB-ranked maps instead of a random subset.
    pub ranked_keep: bool,
}

impl Default for SemanticTraining {
    fn default() -> Self {
        SemanticTraining {
            epochs: 20,
            learning_rate: 0.003,
            snr_lo_db: 0.0,
            snr_hi_db: 20.0,
            keep_lo: 1.0 / 256.0,
            keep_hi: 1.0,
            ranked_keep: true,
        }
    }
}

impl SemanticTraining {
    /// The train config for fine-tuning, derived from the clean one.
    /// `order` is the map ranking used when `ranked_keep` is set; without
    /// it the identity order stands in.
    pub fn train_config(&self, clean: &TrainConfig, k: usize, order: Option<&[usize]>) -> TrainConfig {
        let (lo, hi) = (self.keep_lo, self.keep_hi);
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: clean.seed ^ 0x5E3A,
            channel_mode: ChannelMode::AnalogAwgn {
                snr_lo_db: self.snr_lo_db,
                snr_hi_db: self.snr_hi_db,
            },
            prune_aware: if self.ranked_keep {
                PruneAware::RankedKeep {
                    lo,
                    hi,
                    order: order.map_or_else(|| (0..k).collect(), <[usize]>::to_vec),
                }
            } else {
                PruneAware::RandomKeep { lo, hi }
            },
            ..clean.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Optional PGM tree (`<dir>/<class_name>/*.pgm`) used instead of the
    /// synthetic generator.
    pub data_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub semantic: SemanticTraining,
    pub schemes: Vec<Scheme>,
    pub cr: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub quality: Vec<u8>,
    pub fec: Fec,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub link_rate_bps: f64,
    pub output_dir: PathBuf,
    /// Noise- and prune-trained model used by the semantic schemes.
    pub checkpoint: PathBuf,
    /// Clean-trained model used by the baseline codec pipeline.
    pub baseline_checkpoint: PathBuf,
    pub kb: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            data_dir: None,
            train: TrainConfig::default(),
            semantic: SemanticTraining::default(),
            schemes: Scheme::ALL.to_vec(),
            cr: vec![0.0, 0.25, 0.5, 0.75, 0.875, 0.96875],
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            quality: vec![25, 50, 75, 90],
            fec: Fec::Hamming74,
            seeds: vec![1, 2, 3, 4, 5],
            master_seed: 2024,
            link_rate_bps: 1e6,
            output_dir: PathBuf::from("out"),
            checkpoint: PathBuf::from("out/semantic.ckpt"),
            baseline_checkpoint: PathBuf::from("out/clean.ckpt"),
            kb: PathBuf::from("out/kb.txt"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dataset.per_class",
        "dataset.size",
        "dataset.test_fraction",
        "dataset.seed",
        "dataset.dir",
        "train.epochs",
        "train.batch_size",
        "train.learning_rate",
        "train.momentum",
        "train.seed",
        "semantic.epochs",
        "semantic.learning_rate",
        "semantic.snr_lo_db",
        "semantic.snr_hi_db",
        "semantic.keep_lo",
        "semantic.keep_hi",
        "semantic.ranked_keep",
        "schemes",
        "cr",
        "snr_db",
        "quality",
        "fec",
        "seeds",
        "master_seed",
        "link_rate_bps",
        "output_dir",
        "checkpoint",
        "baseline_checkpoint",
        "kb",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset.per_class" => self.dataset.per_class = parse(key, v)?,
            "dataset.size" => self.dataset.size = parse(key, v)?,
            "dataset.test_fraction" => self.dataset.test_fraction = parse(key, v)?,
            "dataset.seed" => self.dataset.seed = parse(key, v)?,
            "dataset.dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.momentum" => self.train.momentum = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "semantic.epochs" => self.semantic.epochs = parse(key, v)?,
            "semantic.learning_rate" => self.semantic.learning_rate = parse(key, v)?,
            "semantic.snr_lo_db" => self.semantic.snr_lo_db = parse(key, v)?,
            "semantic.snr_hi_db" => self.semantic.snr_hi_db = parse(key, v)?,
            "semantic.keep_lo" => self.semantic.keep_lo = parse(key, v)?,
            "semantic.keep_hi" => self.semantic.keep_hi = parse(key, v)?,
            "semantic.ranked_keep" => self.semantic.ranked_keep = parse(key, v)?,
            "schemes" => self.schemes = parse_list(key, v)?,
            "cr" => self.cr = parse_list(key, v)?,
            "snr_db" => self.snr_db = parse_list(key, v)?,
            "quality" => self.quality = parse_list(key, v)?,
            "fec" => self.fec = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "master_seed" => self.master_seed = parse(key, v)?,
            "link_rate_bps" => self.link_rate_bps = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "checkpoint" => self.checkpoint = PathBuf::from(v),
            "baseline_checkpoint" => self.baseline_checkpoint = PathBuf::from(v),
            "kb" => self.kb = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults. `#` starts a
    /// comment; blank lines are ignored.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_config(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Setup(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        fn bad<T>(m: String) -> Result<T> {
            Err(Error::Config(m))
        }
        if self.schemes.is_empty() || self.snr_db.is_empty() || self.seeds.is_empty() {
            return bad("schemes, snr_db and seeds must be non-empty".into());
        }
        if self.schemes.iter().any(|s| s.is_semantic()) && self.cr.is_empty() {
            return bad("semantic schemes need a non-empty cr list".into());
        }
        if self.schemes.contains(&Scheme::BaselineCodec) && self.quality.is_empty() {
            return bad("baseline_codec needs a non-empty quality list".into());
        }
        for &cr in &self.cr {
            CompressionRatio::new(cr).or_else(|e| bad(strip_config(e)))?;
        }
        if let Some(q) = self.quality.iter().find(|q| !(1..=100).contains(*q)) {
            return bad(format!("quality must lie in 1..=100, got {q}"));
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            return bad("snr_db must not be NaN".into());
        }
        if !(self.link_rate_bps > 0.0 && self.link_rate_bps.is_finite()) {
            return bad(format!("link_rate_bps must be positive, got {}", self.link_rate_bps));
        }
        if self.dataset.per_class < 10 || self.dataset.size < 8 {
            return bad("dataset needs per_class >= 10 and size >= 8".into());
        }
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            return bad(format!("dataset.test_fraction must lie in (0, 1), got {}", self.dataset.test_fraction));
        }
        self.train.validate().or_else(|e| bad(strip_config(e)))?;
        self.semantic
            .train_config(&self.train, 1, None)
            .validate()
            .or_else(|e| bad(strip_config(e)))?;
        Ok(())
    }

    /// Renders every field in the text format; `parse_text` reads it back.
    pub fn to_text(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
        }
        let d = &self.dataset;
        let t = &self.train;
        let s = &self.semantic;
        let lines = [
            format!("dataset.per_class = {}", d.per_class),
            format!("dataset.size = {}", d.size),
            format!("dataset.test_fraction = {}", d.test_fraction),
            format!("dataset.seed = {}", d.seed),
            format!("dataset.dir = {}", self.data_dir.as_deref().map(|p| p.display().to_string()).unwrap_or_default()),
            format!("train.epochs = {}", t.epochs),
            format!("train.batch_size = {}", t.batch_size),
            format!("train.learning_rate = {}", t.learning_rate),
            format!("train.momentum = {}", t.momentum),
            format!("train.seed = {}", t.seed),
            format!("semantic.epochs = {}", s.epochs),
            format!("semantic.learning_rate = {}", s.learning_rate),
            format!("semantic.snr_lo_db = {}", s.snr_lo_db),
            format!("semantic.snr_hi_db = {}", s.snr_hi_db),
            format!("semantic.keep_lo = {}", s.keep_lo),
            format!("semantic.keep_hi = {}", s.keep_hi),
            format!("semantic.ranked_keep = {}", s.ranked_keep),
            format!("schemes = {}", join(&self.schemes)),
            format!("cr = {}", join(&self.cr)),
            format!("snr_db = {}", join(&self.snr_db)),
            format!("quality = {}", join(&self.quality)),
            format!("fec = {}", self.fec.name()),
            format!("seeds = {}", join(&self.seeds)),
            format!("master_seed = {}", self.master_seed),
            format!("link_rate_bps = {}", self.link_rate_bps),
            format!("output_dir = {}", self.output_dir.display()),
            format!("checkpoint = {}", self.checkpoint.display()),
            format!("baseline_checkpoint = {}", self.baseline_checkpoint.display()),
            format!("kb = {}", self.kb.display()),
        ];
        lines.join("\n") + "\n"
    }
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}
